"""Mine package adoption decisions from version-control dumps and model them
as a two-alternative discrete choice."""

__version__ = "0.1.0"
