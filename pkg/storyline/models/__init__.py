# Domain models package
from storyline.models.album import Album, Dataset, PlantedTruth
from storyline.models.rnn import Gradients, MomentumState, RnnParams, StepOutput
from storyline.models.story import SrnnModel, StoryMode, StorySample

__all__ = [
    "Album",
    "Dataset",
    "PlantedTruth",
    "Gradients",
    "MomentumState",
    "RnnParams",
    "StepOutput",
    "SrnnModel",
    "StoryMode",
    "StorySample",
]
