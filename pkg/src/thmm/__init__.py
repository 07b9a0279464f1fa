"""Tree-structured HMMs conditioned on syntactic functions, trained with EM
on dependency-parsed corpora, for inducing word representations."""

__version__ = "0.1.0"

from .corpus import (ColumnMap, Corpus, CorpusConfig, DepTree, RawSentence, Token,
                     build_corpus, build_synfunc_inventory, build_vocabulary, encode_tree,
                     filter_sentences, parse_conll)
from .inference import (BeliefTable, ProjectionConfig, beliefs, downward_pass,
                        max_product_decode, tree_log_likelihood, upward_pass)
from .model import (BrownClusterMap, ModelMeta, ModelParams, init_brown, init_random,
                    param_count, transition_entropy, validate)
from .representations import post_token, post_type, decode_labels, export_type_reps
from .training import (SufficientStats, TrainConfig, accumulate_estep, m_step, split_states,
                       train_batch_em, train_stepwise_em, train_with_splitting)


def sample_data(name: str = "sample.conll") -> str:
    """Path of a bundled data file (``sample.conll`` or ``sample_clusters.txt``)."""
    from importlib.resources import files
    return str(files(__name__) / "data" / name)
