import sys
from typing import List, Optional

import sentry_sdk

from app.api.commands import build_parser
from app.config.dependencies import get_settings
from app.utils.logging import set_log_level, setup_logging

logger = setup_logging(app_name=__name__)


def configure_sentry() -> None:
    settings = get_settings()
    if settings.SENTRY_DSN and settings.ENVIRONMENT.lower() == "production":
        sentry_sdk.init(dsn=settings.SENTRY_DSN, traces_sample_rate=1.0)
        logger.info("Sentry reporting enabled")


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point of the ``hybrid-aif`` command."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "validate" and not (args.scenario or args.all):
        parser.error("validate needs a scenario or --all")
    if args.log_level:
        set_log_level(args.log_level)
    configure_sentry()
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
