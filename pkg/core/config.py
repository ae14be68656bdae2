"""
Centralized configuration system for recurnet.

This module provides a structured configuration system with environment variable
support, validation, and default values. Every knob reads a ``RECURNET_*``
variable; a ``.env`` file in the working directory is honoured.
"""

import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from core.exceptions import ConfigurationException

# Load environment variables
load_dotenv()


def _default_threads() -> int:
    return max(1, min(4, os.cpu_count() or 1))


@dataclass
class SolverConfig:
    """Linear solver limits and tolerances"""
    direct_limit: int = 50_000
    cg_rtol: float = 1e-12
    residual_tol: float = 1e-10
    table_cap: int = 5_000
    cg_maxiter: int = 200_000

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def validate(self):
        """Validate solver limits"""
        if self.direct_limit < 1 or self.table_cap < 1:
            raise ConfigurationException(
                f"Solver limits must be positive, got direct_limit={self.direct_limit}, "
                f"table_cap={self.table_cap}"
            )
        for name in ('cg_rtol', 'residual_tol'):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigurationException(f"Solver tolerance '{name}' must be in (0, 1), got {value}")


@dataclass
class MonteCarloConfig:
    """Monte Carlo defaults"""
    n_paths: int = 10_000
    block_size: int = 1024
    step_budget: int = 1_000_000
    epsilon: float = 1e-4

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def validate(self):
        if self.n_paths < 1 or self.block_size < 1 or self.step_budget < 1:
            raise ConfigurationException("Monte Carlo sizes must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigurationException(f"Stop-rule epsilon must be in (0, 1), got {self.epsilon}")


@dataclass
class OutputConfig:
    """Report output settings"""
    out_dir: str = 'out'
    float_format: str = '%.17g'


@dataclass
class ThreadConfig:
    """Parallelism cap"""
    max_workers: int = field(default_factory=_default_threads)

    def validate(self):
        if self.max_workers < 1:
            raise ConfigurationException(
                f"RECURNET_THREADS must be a positive integer, got {self.max_workers}"
            )


@dataclass
class Config:
    """Main application configuration"""
    solver: SolverConfig
    monte_carlo: MonteCarloConfig
    output: OutputConfig
    threads: ThreadConfig
    log_level: str = 'WARNING'
    log_json: bool = False
    environment: str = 'development'

    def validate(self):
        """Validate the entire configuration"""
        self.solver.validate()
        self.monte_carlo.validate()
        self.threads.validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def get_config() -> Config:
    """
    Get application configuration from environment variables.

    Returns:
        Config object with all settings loaded and validated

    Raises:
        ConfigurationException: If configuration is invalid
    """
    try:
        threads_env = os.getenv('RECURNET_THREADS')
        config = Config(
            solver=SolverConfig(
                direct_limit=int(os.getenv('RECURNET_DIRECT_LIMIT', '50000')),
                cg_rtol=float(os.getenv('RECURNET_CG_RTOL', '1e-12')),
                residual_tol=float(os.getenv('RECURNET_RESIDUAL_TOL', '1e-10')),
                table_cap=int(os.getenv('RECURNET_TABLE_CAP', '5000')),
            ),
            monte_carlo=MonteCarloConfig(
                n_paths=int(os.getenv('RECURNET_MC_PATHS', '10000')),
                block_size=int(os.getenv('RECURNET_MC_BLOCK', '1024')),
                step_budget=int(os.getenv('RECURNET_MC_BUDGET', '1000000')),
                epsilon=float(os.getenv('RECURNET_MC_EPSILON', '1e-4')),
            ),
            output=OutputConfig(
                out_dir=os.getenv('RECURNET_OUT_DIR', 'out'),
            ),
            threads=ThreadConfig(
                max_workers=int(threads_env) if threads_env else _default_threads(),
            ),
            log_level=os.getenv('RECURNET_LOG_LEVEL', 'WARNING').upper(),
            log_json=os.getenv('RECURNET_LOG_JSON', 'false').lower() == 'true',
            environment=os.getenv('RECURNET_ENV', 'development').lower(),
        )

        # Validate configuration
        config.validate()

        return config

    except ConfigurationException:
        raise
    except ValueError as e:
        raise ConfigurationException(f"Invalid configuration value: {e}") from e
    except Exception as e:
        raise ConfigurationException(f"Configuration error: {e}") from e


# Global configuration instance
_config: Optional[Config] = None


def get_global_config() -> Config:
    """Get the global configuration instance (singleton pattern)"""
    global _config
    if _config is None:
        _config = get_config()
    return _config


def reset_global_config() -> None:
    """Drop the cached configuration so the next access re-reads the environment"""
    global _config
    _config = None
