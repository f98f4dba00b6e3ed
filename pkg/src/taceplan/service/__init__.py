from .app import create_app
from .store import Store, build_model, bootstrap_demo

__all__ = ["create_app", "Store", "build_model", "bootstrap_demo"]
