"""Dyskinesia and parkinsonism severity from 2D pose trajectories.

The package turns per-joint keypoint trajectories of clinical assessment
videos into fixed-length movement feature vectors, and trains random forests
that predict clinician subscores under leave-one-subject-out validation.

Modules
-------
core           trajectories, ratings, dataset validation
dsp            smoothing, filtering and spectral estimation
preprocessing  camera-shake removal, trajectory cleaning, bounding boxes
features       kinematic and spectral feature vectors
forest         CART trees, random forests, randomized search
evaluation     labels, metrics, LOSO experiments
cli            command line entry point
"""

__version__ = "0.1.0"
