# main.py
"""
instanseg command-line entry point
"""
import os
import sys
from typing import List, Optional

from loguru import logger

from app.cli import build_parser
from app.config import settings


def configure_logging(level: str = "INFO", log_dir: str = "logs"):
    """Configure logging with enhanced settings"""
    # Remove default handler
    logger.remove()

    # Add colored console handler with better formatting
    logger.add(
        sys.stderr,
        format="<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
        level=level
    )

    # Add file handler for persistent logs
    os.makedirs(log_dir, exist_ok=True)
    logger.add(
        os.path.join(log_dir, "instanseg_{time:YYYY-MM-DD}.log"),
        rotation="12:00",  # New file at noon
        retention="7 days",  # Keep logs for 7 days
        compression="zip",  # Compress old log files
        level="DEBUG"
    )


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging("DEBUG" if args.verbose else settings.LOG_LEVEL, settings.LOG_DIR)
    # 命令行 --threads 优先于环境变量
    if args.threads:
        settings.THREADS = max(1, args.threads)
    logger.debug(f"running {args.command} with {settings.THREADS} worker threads")
    # 分发到子命令
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
