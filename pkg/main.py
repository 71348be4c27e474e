import sys

from pydantic import ValidationError

from app import app

if __name__ == "__main__":
    args = app.parse_args()
    try:
        cfg = app.load_config_from_env_file(args.env_file)
    except (FileNotFoundError, ValidationError) as e:
        print(e, file=sys.stderr)
        sys.exit(2)
    app.configure_logging(cfg)
    router = app.create_app(cfg)
    sys.exit(app.run(router, args))
