"""Encoding-model analysis of where LM representations fail to predict MEG responses."""

from .denoise import CrossSubjectDenoiser, average_repetitions, denoise_group, fit_cross_subject_map
from .divergence import (CorpusSplit, category_improvement, extract_sets, hypothesis_cv_splits,
                         merge_annotations, sentence_scores)
from .encoding import (ContiguousRidgeCV, EncodeConfig, RidgeEncoder, contiguous_folds, fit_ridge,
                       layer_sweep, nested_cv_predict)
from .evaluate import correlation_map, delta_mse, pearson, significant_channels, word_mse
from .mcq import MCQItem, mcq_accuracy, mcq_loss, option_score
from .stats import (binomial_test, bh_fdr, chi_square_independence, krippendorff_alpha,
                    permutation_test, permutation_test_batch, t_test_two_sample)
from .tensor_io import (EmbeddingMatrix, ResponseTensor, StimulusSequence, SynthConfig, Tensor,
                        WordEvent, load_stimulus, read_tensor, synth_dataset, write_tensor)

__version__ = "0.1.0"
