from .main import BINARY, train_binary
