"""Graph-transformer denoisers, condition encoding, training loops and gradient checks."""

from .condition import ConditionEmbedding, batch_conditions, condition_encode, embedding_table, null_condition
from .gradcheck import gradcheck
from .network import GraphDenoiser, GraphTransformerConfig, build_network
from .train import DecoderModel, PriorModel, TrainConfig, train_decoder, train_prior
