"""plotkit: figures from sharpkit experiment CSV output."""

from .render import KINDS, PlotSpec, RenderResult, render
from .schema import EmptyInputError, Row, SchemaError, read_csv

__version__ = "0.1.0"
