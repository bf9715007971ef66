"""
Visual question answering: encoder, fusion and decoder models trained with
a small numpy autodiff core, non-neural baselines, and the WUPS / consensus
evaluation suite.

Evaluation runs in the `asynchronous` module, with a wrapper in
`synchronous` for plain calls.
"""

__version__ = '0.1.0'

from .config import RunConfig, load_config, load_metric_config
from .data import QAInstance, load_daquar_txt, load_qa_jsonl, preprocess_question
from .errors import AynError
from .features import VisualFeatureStore, load_features
from .metrics import MetricConfig, PredictionRecord, wups_corpus, consensus_score, vqa_accuracy
from .model import VqaModel, load_checkpoint, save_checkpoint
from .synchronous import evaluate, score_frame
from .taxonomy import Taxonomy, load_taxonomy
from .train import train
