"""
Schemas for the dataset manifest JSON document.
"""

from typing import List, Union

from pydantic import BaseModel, ConfigDict, Field


class ManifestItem(BaseModel):
    """One image of an album: its id, capture time and row in the feature file."""

    image_id: str = Field(..., description="Image identifier")
    timestamp: Union[int, str] = Field(..., description="Epoch seconds or an ISO-8601 timestamp")
    row: int = Field(..., ge=0, description="0-based row in the album's feature file")


class ManifestAlbum(BaseModel):
    id: str = Field(..., description="Album identifier")
    feature_file: str = Field(..., description="SRNF file path, relative to the manifest")
    items: List[ManifestItem] = Field(..., min_length=1)


class Manifest(BaseModel):
    """Top-level manifest: ``{concept, albums: [{id, feature_file, items}]}``."""

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "concept": "paris",
                "albums": [
                    {
                        "id": "album_0000",
                        "feature_file": "features/album_0000.srnf",
                        "items": [{"image_id": "img_0001", "timestamp": 1400000000, "row": 0}],
                    }
                ],
            }
        }
    )

    concept: str = Field(..., description="Concept name shared by all albums")
    albums: List[ManifestAlbum] = Field(..., min_length=1)
