import time
from functools import wraps
from pathlib import Path
from typing import Union

from prometheus_client import (
    CollectorRegistry,
    Counter,
    Histogram,
    generate_latest,
    write_to_textfile,
)


def monitor_operation(operation_type: str):
    """Decorator to monitor operations with metrics."""

    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            from app.config.dependencies import get_metrics_manager

            metrics = get_metrics_manager()
            start_time = time.perf_counter()
            try:
                result = func(*args, **kwargs)
                metrics.increment_operation_count(operation_type, "success")
                return result
            except Exception as e:
                metrics.increment_operation_count(operation_type, "failure")
                metrics.increment_error_count(error_type=type(e).__name__)
                raise
            finally:
                metrics.observe_operation_latency(
                    operation_type, time.perf_counter() - start_time
                )

        return wrapper

    return decorator


class MetricsManager:
    """Manager class for Prometheus metrics to avoid registration conflicts."""

    def __init__(self):
        self.registry = CollectorRegistry()

        self.run_counter = Counter(
            name="hybrid_aif_runs_total",
            documentation="Total scenario runs",
            labelnames=["scenario", "status"],
            registry=self.registry,
        )

        self.tick_counter = Counter(
            name="hybrid_aif_ticks_total",
            documentation="Simulated continuous ticks",
            labelnames=["scenario"],
            registry=self.registry,
        )

        self.run_duration = Histogram(
            name="hybrid_aif_run_duration_seconds",
            documentation="Wall time of scenario runs",
            labelnames=["scenario"],
            buckets=(0.1, 0.5, 1, 2, 5, 10, 30, 60, 120, 300),
            registry=self.registry,
        )

        self.operation_counter = Counter(
            name="hybrid_aif_operations_total",
            documentation="Monitored operations",
            labelnames=["operation_type", "status"],
            registry=self.registry,
        )

        self.operation_latency = Histogram(
            name="hybrid_aif_operation_latency_seconds",
            documentation="Latency of monitored operations",
            labelnames=["operation_type"],
            buckets=(0.0005, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1, 5),
            registry=self.registry,
        )

        self.error_counter = Counter(
            name="hybrid_aif_errors_total",
            documentation="Total number of errors",
            labelnames=["error_type"],
            registry=self.registry,
        )

    def increment_run_count(self, scenario: str, status: str) -> None:
        """Increment the run counter."""
        self.run_counter.labels(scenario=scenario, status=status).inc()

    def increment_tick_count(self, scenario: str, ticks: int) -> None:
        self.tick_counter.labels(scenario=scenario).inc(ticks)

    def observe_run_duration(self, scenario: str, duration: float) -> None:
        """Record run duration."""
        self.run_duration.labels(scenario=scenario).observe(duration)

    def increment_operation_count(self, operation_type: str, status: str) -> None:
        self.operation_counter.labels(operation_type=operation_type, status=status).inc()

    def observe_operation_latency(self, operation_type: str, duration: float) -> None:
        self.operation_latency.labels(operation_type=operation_type).observe(duration)

    def increment_error_count(self, error_type: str) -> None:
        """Increment the error counter."""
        self.error_counter.labels(error_type=error_type).inc()

    def get_metrics(self) -> bytes:
        """Generate metrics output."""
        return generate_latest(self.registry)

    def write_textfile(self, path: Union[str, Path]) -> None:
        """Dump the registry in Prometheus text format."""
        write_to_textfile(str(path), self.registry)
