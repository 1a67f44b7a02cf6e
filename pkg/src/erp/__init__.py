"""Entropy-reinforced Monte-Carlo tree search over token sequences."""

from erp.decode import EntropyMemo, beam_search, entropy, lookahead_entropy, sample_topk, top_pk
from erp.policy import NGramPolicy, RemotePolicy, TablePolicy, UniformPolicy, apply_temperature, train_ngram
from erp.reward import RewardSpec, builtin_critic, combined_reward, normalize, remote_critic, validity_check
from erp.search import SearchConfig, run_search
from erp.vocab import SequenceState, Vocabulary, build_vocab, detokenize, tokenize

__version__ = "0.1.0"

__all__ = [
    "EntropyMemo", "NGramPolicy", "RemotePolicy", "RewardSpec", "SearchConfig", "SequenceState",
    "TablePolicy", "UniformPolicy", "Vocabulary", "apply_temperature", "beam_search",
    "build_vocab", "builtin_critic", "combined_reward", "detokenize", "entropy",
    "lookahead_entropy", "normalize", "remote_critic", "run_search", "sample_topk",
    "tokenize", "top_pk", "train_ngram", "validity_check",
]
