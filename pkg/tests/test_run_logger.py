import logging

import numpy as np

from msrd.services.run_logger import RunLogger


class _Collection:
    def __init__(self):
        self.entries = []

    def insert_one(self, entry):
        self.entries.append(entry)


def test_disabled_without_uri():
    logger = RunLogger()
    assert logger.enabled is False
    assert logger.collection is None


def test_context_is_rendered(caplog):
    logger = RunLogger()
    with caplog.at_level(logging.INFO, logger="msrd"):
        logger.info("Ensemble finished", context={"replicas": 3, "errors": np.array([0.5, 0.25])})
    assert 'Ensemble finished {"replicas":3,"errors":[0.5,0.25]}' in caplog.text


def test_entries_reach_the_collection():
    logger = RunLogger()
    logger.collection = _Collection()
    logger.enabled = True
    try:
        raise ValueError("bad state")
    except ValueError as e:
        logger.error("Command failed", error=e, context={"command": "simulate"})
    entry = logger.collection.entries[0]
    assert entry["level"] == "ERROR"
    assert entry["context"] == {"command": "simulate"}
    assert entry["error"] == "bad state"
    assert "ValueError" in entry["traceback"]
