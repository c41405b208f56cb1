"""Scenario harness: configs, world building, metrics, invariants and CLI.

Import submodules directly (``vsn.harness.run``, ``vsn.harness.cli``);
this package stays light so ``vsn.firecontour`` can use ``metrics``.
"""
