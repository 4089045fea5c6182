from app.cli.commands import (
    EXIT_ERROR,
    EXIT_OK,
    EXIT_VERIFY,
    build_parser,
    cmd_bench,
    cmd_eval,
    cmd_gen,
    cmd_gradcheck,
    cmd_infer,
    cmd_train,
)

__all__ = [
    "EXIT_ERROR",
    "EXIT_OK",
    "EXIT_VERIFY",
    "build_parser",
    "cmd_bench",
    "cmd_eval",
    "cmd_gen",
    "cmd_gradcheck",
    "cmd_infer",
    "cmd_train",
]
