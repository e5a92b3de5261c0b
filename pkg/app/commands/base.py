"""
Rich-rendered help for the felo command line.

- `rich_help` builds the marked-up text shown in a command's help panel:
  description, usage, arguments, and optional examples.
- `RichCommand` renders that text in a panel, followed by the command's
  options and positional arguments as click declares them.
- `RichGroup` lists the subcommands and group options.
"""

from typing import Optional
from rich.console import Console
from rich.panel import Panel
import click
from app.lib.log import LOG

console: Console = Console()


def rich_help(
    command: str,
    description: str,
    usage: str,
    args: dict[str, str],
    examples: Optional[list[str]] = None,
) -> str:
    """
    Marked-up help text for a command panel.

    Args:
        command: Command name
        description: One-line purpose
        usage: Usage synopsis
        args: Argument or option → description
        examples: Complete example invocations

    Returns:
        str: Rich markup
    """
    lines: list[str] = [
        f"[bold cyan]{command}[/bold cyan]: {description}",
        "",
        "[bold yellow]Usage:[/bold yellow]",
        f"    [green]{usage}[/green]",
        "",
        "[bold yellow]Arguments:[/bold yellow]",
    ]
    lines.extend(f"    [green]{name}[/green]: {text}" for name, text in args.items())
    if examples:
        lines.extend(["", "[bold yellow]Examples:[/bold yellow]"])
        lines.extend(f"    [magenta]$ {example}[/magenta]" for example in examples)
    return "\n".join(lines) + "\n"


def parameters_print(command: click.Command, ctx: click.Context) -> None:
    """Options, then positional arguments, of a command."""
    params: list[click.Parameter] = command.get_params(ctx)
    options: list[click.Option] = [p for p in params if isinstance(p, click.Option)]
    arguments: list[click.Argument] = [p for p in params if isinstance(p, click.Argument)]
    if options:
        console.print("[bold yellow]Options:[/bold yellow]")
        for option in options:
            required: str = " [red](required)[/red]" if option.required else ""
            default: str = (
                f" [dim](default {option.default})[/dim]"
                if option.default not in (None, False, ()) and not option.is_flag
                else ""
            )
            console.print(
                f"- [cyan]{', '.join(option.opts)}[/cyan]{required}: "
                f"{option.help or 'No description'}{default}"
            )
    if arguments:
        console.print("[bold yellow]Positional:[/bold yellow]")
        for argument in arguments:
            repeat: str = "..." if argument.nargs == -1 else ""
            console.print(f"- [cyan]{argument.human_readable_name}{repeat}[/cyan]")


class RichGroup(click.Group):
    """
    Click group whose help lists subcommands in colour.
    """

    def format_help(self, ctx: click.Context, formatter: click.HelpFormatter) -> None:
        try:
            console.print(
                f"[bold yellow]Usage:[/bold yellow] [cyan]{ctx.info_name or 'felo'}[/cyan] "
                f"[magenta][OPTIONS] COMMAND [ARGS]...[/magenta]\n"
            )
            if self.help:
                console.print(f"[bold cyan]{self.help.strip()}[/bold cyan]\n")
            console.print("[bold green]Available Commands:[/bold green]")
            for name, command in sorted(self.commands.items()):
                console.print(f"- [cyan]{name}[/cyan]: {command.short_help or ''}")
            console.print()
            parameters_print(self, ctx)
        except Exception as e:
            LOG(f"help rendering failed: {e}")
            console.print(f"[bold red]Help rendering error:[/bold red] {e}")


class RichCommand(click.Command):
    """
    Click command whose help is a Rich panel followed by its parameters.
    """

    def format_help(self, ctx: click.Context, formatter: click.HelpFormatter) -> None:
        try:
            text: str = self.help or "No help text available."
            width: int = min(max(len(line) for line in text.splitlines()) + 10, 100)
            console.print(Panel(text, expand=False, width=width, border_style="cyan"))
            parameters_print(self, ctx)
        except Exception as e:
            LOG(f"help rendering failed: {e}")
            console.print(f"[bold red]Help rendering error:[/bold red] {e}")
