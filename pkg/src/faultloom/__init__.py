"""faultloom: an automated empirical software-fault study pipeline.

Three stages: research definition, fault-related issue filtering, and
taxonomy-anchored symptom / root-cause classification, plus a reproducible
evaluation harness against expert gold labels.
"""

__version__ = "0.1.0"
