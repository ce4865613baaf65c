"""MDL-regularised free-form recurrent networks on formal languages."""

__version__ = "0.1.0"
