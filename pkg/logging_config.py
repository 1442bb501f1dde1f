import logging
import sys
from datetime import datetime
import os

from dotenv import load_dotenv

def setup_logging():
    """Configure logging for the application"""

    # .env may carry LOG_LEVEL / LOG_FILE
    load_dotenv()

    # Get log level from environment
    log_level = os.getenv('LOG_LEVEL', 'INFO').upper()
    level = getattr(logging, log_level, logging.INFO)

    # Create formatter
    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    # Configure root logger
    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    # Remove existing handlers
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    # Console handler; stdout carries command output
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    # File handler (optional)
    if os.getenv('LOG_FILE'):
        file_handler = logging.FileHandler(os.getenv('LOG_FILE'))
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)

    # Suppress some noisy loggers
    logging.getLogger('lark').setLevel(logging.WARNING)
    logging.getLogger('asyncio').setLevel(logging.WARNING)

    return root_logger

logger = logging.getLogger('rule_engine')

class EngineLogger:
    """Custom logger for the prover"""

    @staticmethod
    def log_plan(partitions: int, stages: int, rules: int):
        """Log the partition plan of a compiled program"""
        logger.info(f"Engine plan: {rules} rules in {partitions} partitions, {stages} stages", extra={
            'partitions': partitions,
            'stages': stages,
            'rules': rules,
            'timestamp': datetime.now().isoformat()
        })

    @staticmethod
    def log_prune(label: str, prune):
        """Log a branch cut by a FALSE consequent"""
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(f"Pruned {label}: {prune}", extra={
                'label': label,
                'rule': prune.rule,
                'sti': prune.sti
            })

class CompilerLogger:
    """Custom logger for the specializer"""

    @staticmethod
    def log_specialization(generic: int, split: int, folded: int):
        """Log the outcome of rule splitting"""
        logger.info(f"Specialized {generic} rules into {split} rules, {folded} folded predicates", extra={
            'generic_rules': generic,
            'split_rules': split,
            'folded_predicates': folded,
            'timestamp': datetime.now().isoformat()
        })

    @staticmethod
    def log_divergence(label: str, kind: str, detail: str):
        """Log the first divergence between generic and split runs"""
        logger.warning(f"Equivalence divergence at {label}: {kind} - {detail}", extra={
            'label': label,
            'kind': kind,
            'timestamp': datetime.now().isoformat()
        })

class ExplorerLogger:
    """Custom logger for exploration runs"""

    @staticmethod
    def log_start(mode: str, theorem: str = None, parallelism: int = 1):
        """Log the start of an exploration"""
        logger.info(f"Exploration started: mode={mode} theorem={theorem or '-'}", extra={
            'mode': mode,
            'theorem': theorem,
            'parallelism': parallelism,
            'timestamp': datetime.now().isoformat()
        })

    @staticmethod
    def log_progress(completed: int, pruned: int):
        """Log periodic progress"""
        logger.info(f"Explored {completed + pruned} leaves ({completed} completed, {pruned} pruned)", extra={
            'completed': completed,
            'pruned': pruned
        })

    @staticmethod
    def log_verdict(verdict: str, completed: int, pruned: int, wall_time: float):
        """Log the final verdict"""
        logger.info(f"Verdict {verdict}: {completed} completed, {pruned} pruned in {wall_time:.2f}s", extra={
            'verdict': verdict,
            'completed': completed,
            'pruned': pruned,
            'wall_time': wall_time,
            'timestamp': datetime.now().isoformat()
        })

    @staticmethod
    def log_counterexample(label: str, theorem: str):
        """Log a counterexample trajectory"""
        logger.warning(f"Counterexample to {theorem} at label {label}", extra={
            'label': label,
            'theorem': theorem
        })

    @staticmethod
    def log_error(operation: str, error: Exception):
        """Log an exploration error"""
        logger.error(f"Explorer Error: {operation} - {str(error)}", extra={
            'operation': operation,
            'error_type': type(error).__name__,
            'error_message': str(error),
            'timestamp': datetime.now().isoformat()
        })
