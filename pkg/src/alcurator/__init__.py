"""Active-learning dataset curation for molecular property prediction.

Grows a GP training set from a finite molecular pool via batch acquisition
strategies, tracks learning curves and classification metrics, and supports
targeted property search over a label threshold.
"""

__version__ = "0.1.0"
