"""Orientation estimation for cryo-EM projections.

Subpackages and modules:

* :mod:`cryorient.so3` quaternions, Euler angles, distances, symmetry
* :mod:`cryorient.rep_heads` network output heads (quaternion, 6D, QCQP)
* :mod:`cryorient.uncertainty` Bingham dispersions and quantile filtering
* :mod:`cryorient.losses` losses, curriculum, one-cycle schedule
* :mod:`cryorient.sampling` training pair selection
* :mod:`cryorient.simulator` synthetic data and preprocessing
* :mod:`cryorient.nn` autodiff, encoder, training, inference
* :mod:`cryorient.recon` reconstruction, FSC, error reports
* :mod:`cryorient.cli` command line
"""
__version__ = "0.1.0"
