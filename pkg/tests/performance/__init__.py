"""Performance baselines using pytest-benchmark.

Latency targets for the hot paths:
- Sketch construction at d = 256, m = 4096: mean < 250ms
- Paired regression estimate at d = 128, m = 2048: mean < 1s
- Brute-force oracle at d = 16: mean < 2s

All tests require UNISHAP_RUN_PERFORMANCE=true.
"""
