from storyline.commands.data import gen
from storyline.commands.evaluate import evaluate, predict
from storyline.commands.stories import export_graph, storyline, summarize
from storyline.commands.training import nsweep, train

__all__ = ["gen", "train", "nsweep", "storyline", "summarize", "export_graph", "predict", "evaluate"]
