import sys
from loguru import logger
from selshare.core.config import settings

# Drop the default handler
logger.remove()

logger.add(
    sys.stdout,
    format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
    level=settings.LOG_LEVEL,
    colorize=False,
)

if settings.LOG_FILE:
    logger.add(settings.LOG_FILE, level=settings.LOG_LEVEL, rotation="10 MB")


def log_run_start(out_dir: str, criterion: str, n_tasks: int, seed: int):
    """Run banner"""
    logger.info("=" * 50)
    logger.info(f"🚀 Starting {settings.PROJECT_NAME} run")
    logger.info(f"📁 Output: {out_dir}")
    logger.info(f"🧭 Criterion: {criterion} | Tasks: {n_tasks} | Seed: {seed}")
    logger.info("=" * 50)


def log_epoch_summary(epoch: int, mean_loss: float, val_score: float, branches: int, params: int):
    """One line per finished epoch"""
    logger.info(
        f"📈 Epoch {epoch} | loss: {mean_loss:.5f} | val: {val_score:.4f} | "
        f"branches: {branches} | params: {params}"
    )


def log_cluster_outcome(epoch: int, n_points: int, n_clusters: int, n_noise: int):
    """Clustering phase result"""
    logger.debug(f"🔎 Epoch {epoch} | points: {n_points} | clusters: {n_clusters} | noise: {n_noise}")


def log_arch_event(epoch: int, groups: list, params_before: int, params_after: int):
    """Architecture change (or the lack of it)"""
    if groups:
        logger.info(f"🔀 Epoch {epoch} | merged groups: {groups} | params: {params_before} -> {params_after}")
    else:
        logger.info(f"⏸️  Epoch {epoch} | no architecture change")


def log_lock(epoch: int, reason: str):
    """Restructuring permanently disabled"""
    logger.info(f"🔒 Architecture locked at epoch {epoch} ({reason})")
