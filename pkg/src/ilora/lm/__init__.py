from .vocab import Vocab, build_vocab, detokenize, normalize, tokenize
from .model import (BehaviorProjector, ContextOverflowError, HybridTokenSequence, InstructionPair,
                    LMConfig, ToyLM, embed_hybrid)
from .adapted import (AdaptedLM, AdapterConfig, FinetuneConfig, ModeError, finetune,
                      greedy_decode, lm_loss, pretrain_lm)

__all__ = [
    "AdaptedLM", "AdapterConfig", "BehaviorProjector", "ContextOverflowError", "FinetuneConfig",
    "HybridTokenSequence", "InstructionPair", "LMConfig", "ModeError", "ToyLM", "Vocab",
    "build_vocab", "detokenize", "embed_hybrid", "finetune", "greedy_decode", "lm_loss",
    "normalize", "pretrain_lm", "tokenize",
]
