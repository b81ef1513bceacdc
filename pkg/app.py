"""
Main entry point for Sectoria.

This module provides the application factory for the command-line tool.
Task commands are organized in separate modules in the commands package.
"""

import logging

import click

from commands import register_commands
from settings import VERSION


def create_app() -> click.Group:
    """
    Application factory function to create and configure the CLI.

    Returns:
        click.Group: command group with every task registered
    """
    @click.group(name="sectoria")
    @click.version_option(VERSION)
    @click.option("--verbose", is_flag=True, help="Log service details.")
    def cli(verbose):
        logging.basicConfig(
            level=logging.DEBUG if verbose else logging.INFO,
            format="[%(module)-12s] %(message)s",
        )

    register_commands(cli)
    return cli


def main():
    create_app()()


if __name__ == '__main__':
    main()
