from selshare.data.planted import gen_planted, load_planted_spec
from selshare.data.tasks import MultiTaskData, load_mnist, make_one_vs_all
from selshare.models.enums import DatasetKind
from selshare.schemas.config import DatasetConfig


def load_dataset(config: DatasetConfig, seed: int = 0) -> MultiTaskData:
    """Tasks and splits for a run; `seed` drives subsets and batch order"""
    if config.kind == DatasetKind.MNIST:
        dataset = load_mnist(config.mnist_dir, config.train_size, config.val_size, config.test_size, seed)
        return make_one_vs_all(dataset).to_multitask(seed)
    spec = config.planted if config.planted is not None else load_planted_spec(config.planted_path)
    data = gen_planted(spec).to_multitask()
    data.seed = seed
    return data
