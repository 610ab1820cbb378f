"""
Performance monitoring utilities for pimspec
"""

import time
import psutil
import logging
from contextlib import contextmanager
from functools import wraps
from typing import Dict, Any

from pimspec.config import Config

logger = logging.getLogger(__name__)


class StageTiming:
    """Elapsed wall time and resident-memory delta of one timed stage"""

    def __init__(self, stage: str):
        self.stage = stage
        self.seconds = 0.0
        self.memory_delta = 0


class PerformanceMonitor:
    """Performance monitoring utility"""

    def __init__(self):
        self.metrics = {}
        self.start_time = time.time()

    def record_stage_time(self, stage: str, duration: float, memory_delta: int = 0):
        """Record stage processing time"""
        if stage not in self.metrics:
            self.metrics[stage] = {
                'calls': 0,
                'total_time': 0.0,
                'avg_time': 0.0,
                'max_time': 0.0,
                'min_time': float('inf'),
                'max_memory_delta': 0
            }

        metrics = self.metrics[stage]
        metrics['calls'] += 1
        metrics['total_time'] += duration
        metrics['avg_time'] = metrics['total_time'] / metrics['calls']
        metrics['max_time'] = max(metrics['max_time'], duration)
        metrics['min_time'] = min(metrics['min_time'], duration)
        metrics['max_memory_delta'] = max(metrics['max_memory_delta'], memory_delta)

    def get_system_metrics(self) -> Dict[str, Any]:
        """Get process and system metrics"""
        process = psutil.Process()
        return {
            'cpu_percent': psutil.cpu_percent(),
            'memory_percent': psutil.virtual_memory().percent,
            'rss_bytes': process.memory_info().rss,
            'uptime': time.time() - self.start_time
        }

    def get_stage_metrics(self) -> Dict[str, Any]:
        """Get stage performance metrics"""
        return self.metrics

    def get_slow_stages(self, threshold: float = None) -> Dict[str, Any]:
        """Get stages whose average time exceeds the threshold"""
        threshold = Config.SLOW_STAGE_SECONDS if threshold is None else threshold
        return {
            stage: metrics for stage, metrics in self.metrics.items()
            if metrics['avg_time'] > threshold
        }

    def reset(self):
        self.metrics.clear()
        self.start_time = time.time()


# Global performance monitor
performance_monitor = PerformanceMonitor()


@contextmanager
def timed_stage(stage: str, monitor: PerformanceMonitor = None):
    """Time a block, record it on the monitor and yield its StageTiming"""
    monitor = monitor or performance_monitor
    timing = StageTiming(stage)
    process = psutil.Process()
    start_memory = process.memory_info().rss
    start_time = time.perf_counter()

    try:
        yield timing
    finally:
        timing.seconds = time.perf_counter() - start_time
        timing.memory_delta = process.memory_info().rss - start_memory
        monitor.record_stage_time(stage, timing.seconds, timing.memory_delta)

        if timing.seconds > Config.SLOW_STAGE_SECONDS:
            logger.warning(f"Slow stage: {stage} took {timing.seconds:.2f}s")

        if timing.memory_delta > 512 * 1024 * 1024:
            logger.warning(f"High memory usage: {stage} used {timing.memory_delta / 1024 / 1024:.2f}MB")


def monitor_performance(stage: str = None):
    """Decorator to record the wall time of a function as a stage"""
    def decorator(f):
        name = stage or f.__name__

        @wraps(f)
        def decorated_function(*args, **kwargs):
            with timed_stage(name):
                return f(*args, **kwargs)
        return decorated_function
    return decorator


def get_performance_stats() -> Dict[str, Any]:
    """Get comprehensive performance statistics"""
    return {
        'system': performance_monitor.get_system_metrics(),
        'stages': performance_monitor.get_stage_metrics(),
        'slow_stages': performance_monitor.get_slow_stages()
    }
