"""Benchmark harness for physics-simulation code generation.

Subsystems: dataset handling (benchdata), model gateway (llmgateway),
prompt assembly (promptkit), script execution (sandbox), video inspection
(mediacheck), scoring (physcodeeval), orchestration (smrf), aggregation and
statistics (reporting), engine profiles (engineprofiles) and the CLI (cli).
"""

__version__ = "0.1.0"
