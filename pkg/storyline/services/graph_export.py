# Transition-graph export of sampled storylines
import logging
import os
from collections import Counter
from typing import Dict, List, Sequence, Tuple

import networkx as nx

from storyline.exceptions import InputValidationError, StorylineError
from storyline.models.album import Dataset
from storyline.models.story import StorySample

logger = logging.getLogger(__name__)

DEFAULT_TOP_M = 10


def _node_name(image_id: str) -> str:
    # pydot rejects unquoted names containing ':'
    return f'"{image_id}"' if ":" in image_id else image_id


def build_transition_graph(stories: Sequence[StorySample], ds: Dataset, top_m: int = DEFAULT_TOP_M) -> nx.DiGraph:
    """
    Weighted digraph of consecutive picks across stories, restricted to the ``top_m``
    most frequently selected images.

    Nodes are ordered by (-frequency, image id); ``graph["total_transitions"]`` keeps the
    edge-weight total before truncation.

    Raises:
        InputValidationError: no stories or top_m < 1
    """
    if not stories:
        raise InputValidationError("Transition graph needs at least one story")
    if top_m < 1:
        raise InputValidationError(f"top_m must be positive, got {top_m}")

    albums = ds.albums_by_id()
    frequency: Counter = Counter()
    transitions: Counter = Counter()
    for story in stories:
        if story.album_id not in albums:
            raise InputValidationError(f"Story references unknown album {story.album_id}")
        image_ids = albums[story.album_id].image_ids
        picked = [image_ids[i] for i in story.indices]
        frequency.update(picked)
        transitions.update(zip(picked, picked[1:]))

    total = sum(transitions.values())
    kept = sorted(frequency, key=lambda image_id: (-frequency[image_id], image_id))[:top_m]
    rank: Dict[str, int] = {image_id: position for position, image_id in enumerate(kept)}

    graph = nx.DiGraph(name=f"{ds.concept}_transitions")
    graph.graph["total_transitions"] = total
    graph.graph["graph"] = {"total_transitions": str(total)}
    for image_id in kept:
        graph.add_node(_node_name(image_id), frequency=frequency[image_id])

    edges: List[Tuple[str, str]] = sorted(
        (pair for pair in transitions if pair[0] in rank and pair[1] in rank),
        key=lambda pair: (rank[pair[0]], rank[pair[1]]),
    )
    for source, target in edges:
        graph.add_edge(_node_name(source), _node_name(target), weight=transitions[(source, target)])

    logger.info(f"Transition graph: {graph.number_of_nodes()} nodes, {graph.number_of_edges()} edges, {total} transitions")
    return graph


def export_transition_graph(
    stories: Sequence[StorySample],
    ds: Dataset,
    out_path: os.PathLike,
    top_m: int = DEFAULT_TOP_M,
) -> nx.DiGraph:
    """
    Write the transition graph of ``stories`` as a DOT digraph.

    Returns:
        The graph that was written

    Raises:
        StorylineError: if the file cannot be written
    """
    graph = build_transition_graph(stories, ds, top_m)
    dot = nx.nx_pydot.to_pydot(graph).to_string()
    try:
        with open(out_path, "w", encoding="utf-8") as handle:
            handle.write(dot)
    except OSError as e:
        raise StorylineError(f"Cannot write graph to {out_path}: {e}")
    logger.info(f"Wrote transition graph to {out_path}")
    return graph
