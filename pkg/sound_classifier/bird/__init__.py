from .main import BIRD, train_model
