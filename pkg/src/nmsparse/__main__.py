"""Allow ``python -m nmsparse``."""

from .cli import main

if __name__ == "__main__":
    main()
