"""
Commands Package - Register all task commands
"""

from .analysis_commands import analyze, extract
from .boundary_commands import dtn, wentzell
from .common import run_command
from .evolution_commands import evolve, invariance, regularize
from .grid_commands import gaffney, multiplicative


def register_commands(cli):
    """Register all task commands with the CLI group."""
    for command in (analyze, extract, evolve, regularize, invariance, gaffney, dtn, wentzell, multiplicative,
                    run_command):
        cli.add_command(command)
