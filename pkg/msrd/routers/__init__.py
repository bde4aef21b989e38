"""Subcommand routing for the msrd command line"""
import argparse
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Tuple

import orjson

from msrd.schemas.network import NetworkSpec
from msrd.schemas.run import CheckResult, RunConfig
from msrd.services.artifacts import ArtifactWriter

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2
EXIT_ACCEPTANCE = 3

Argument = Tuple[Tuple[str, ...], Dict[str, Any]]


def argument(*flags: str, **kwargs) -> Argument:
    """Deferred ``add_argument`` call"""
    return flags, kwargs


@dataclass
class Command:
    name: str
    handler: Callable[["CommandContext"], int]
    help: str = ""
    arguments: List[Argument] = field(default_factory=list)


class CommandRouter:
    """Collects subcommand handlers; ``main`` mounts every router on one parser"""

    def __init__(self):
        self.commands: List[Command] = []

    def command(self, name: str, help: str = "", arguments: List[Argument] = None):
        def decorator(handler: Callable[["CommandContext"], int]):
            self.commands.append(Command(name, handler, help, list(arguments or [])))
            return handler

        return decorator

    def mount(self, subparsers, parents: List[argparse.ArgumentParser]):
        for command in self.commands:
            parser = subparsers.add_parser(command.name, help=command.help, parents=parents)
            for flags, kwargs in command.arguments:
                parser.add_argument(*flags, **kwargs)
            parser.set_defaults(handler=command.handler, command=command.name)


@dataclass
class CommandContext:
    """Resolved inputs of one subcommand invocation"""
    args: argparse.Namespace
    config: RunConfig
    spec: NetworkSpec

    def writer(self) -> ArtifactWriter:
        return ArtifactWriter(
            self.config.output_dir,
            self.config.model_dump(mode="json"),
            formats=self.config.formats,
        )

    def emit(self, payload: Dict[str, Any]):
        """One-line JSON summary on stdout"""
        print(orjson.dumps(payload, option=orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_SORT_KEYS).decode())


def checks_exit_code(checks: List[CheckResult]) -> int:
    return EXIT_OK if all(check.passed for check in checks) else EXIT_ACCEPTANCE
