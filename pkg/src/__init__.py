"""
lesiontag - Source Package
Skin disease classification toolkit: multi-class diagnosis and multi-label lesion tagging.
"""

__version__ = "1.0.0"
__author__ = "lesiontag maintainers"
