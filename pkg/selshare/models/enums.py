import enum


class Activation(str, enum.Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"
    LINEAR = "linear"


class LossKind(str, enum.Enum):
    MSE = "mse"
    BINARY_CROSS_ENTROPY = "binary_cross_entropy"
    CATEGORICAL_CROSS_ENTROPY = "categorical_cross_entropy"
    PAIRWISE_RANKING = "pairwise_ranking"


class TaskKind(str, enum.Enum):
    BINARY_CLASSIFICATION = "binary_classification"
    MULTICLASS_CLASSIFICATION = "multiclass_classification"
    REGRESSION = "regression"
    RANKING = "ranking"


class OptimizerKind(str, enum.Enum):
    SGD_MOMENTUM = "sgd_momentum"
    ADAM = "adam"


class ExtractorKind(str, enum.Enum):
    DENSE = "dense"
    IDENTITY = "identity"


class SharingCriterion(str, enum.Enum):
    SIMILARITY = "similarity"
    DISSIMILARITY = "dissimilarity"
    VARIANCE = "variance"
    RANDOM = "random"
    NONE = "none"


class MergeRule(str, enum.Enum):
    KEEP_LOWEST_LOSS = "keep_lowest_loss"
    MAX = "max"
    MIN = "min"
    MEAN = "mean"


class DatasetKind(str, enum.Enum):
    MNIST = "mnist"
    PLANTED = "planted"


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"
