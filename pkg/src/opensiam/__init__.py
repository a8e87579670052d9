"""Open-set face recognition for small galleries with a Siamese network.

The package works on precomputed face feature vectors (e.g. 2622-dim VGGFace
descriptors). A shared-weight fully connected network is trained with the
contrastive loss on positive/negative pairs drawn from the gallery, and a probe
is scored by its minimum embedding distance to the gallery training samples.
"""

from opensiam.dataset import (
    FeatureStore,
    ProtocolSplit,
    SplitSpec,
    generate_synthetic,
    load_features,
    make_split,
    write_features,
)
from opensiam.metrics import RocReport, TrialAggregate, aggregate, auc_mw, roc
from opensiam.pairing import Pair, PairSet, pair_p1, pair_p2
from opensiam.recognition import (
    Decision,
    GalleryIndex,
    ProbeScore,
    build_gallery,
    calibrate_threshold,
    decide,
    score_probe,
)
from opensiam.siamese import (
    SiameseNet,
    TrainConfig,
    TrainHistory,
    backward,
    contrastive_loss,
    distance,
    forward,
    init_net,
    load_net,
    save_net,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Decision",
    "FeatureStore",
    "GalleryIndex",
    "Pair",
    "PairSet",
    "ProbeScore",
    "ProtocolSplit",
    "RocReport",
    "SiameseNet",
    "SplitSpec",
    "TrainConfig",
    "TrainHistory",
    "TrialAggregate",
    "aggregate",
    "auc_mw",
    "backward",
    "build_gallery",
    "calibrate_threshold",
    "contrastive_loss",
    "decide",
    "distance",
    "forward",
    "generate_synthetic",
    "init_net",
    "load_features",
    "load_net",
    "make_split",
    "pair_p1",
    "pair_p2",
    "roc",
    "save_net",
    "score_probe",
    "train",
    "write_features",
]
