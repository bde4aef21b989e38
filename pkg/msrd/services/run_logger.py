import logging
import traceback
from datetime import datetime, timezone

import orjson
from pymongo import MongoClient

from msrd.config import settings

logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
)


class RunLogger:
    def __init__(self):
        self.client = None
        self.db = None
        self.collection = None
        self.enabled = False
        self.logger = logging.getLogger("msrd")

        if settings.MONGO_URI:
            try:
                self.client = MongoClient(settings.MONGO_URI, serverSelectionTimeoutMS=2000)
                self.db = self.client[settings.MONGO_DB_NAME]
                self.collection = self.db["run_logs"]
                self.enabled = True
                self.logger.info("MongoDB run logging enabled: %s", settings.MONGO_DB_NAME)
            except Exception as e:
                self.logger.warning("Failed to initialize MongoDB run logger: %s", e)

    def log(self, level: str, message: str, context: dict = None, error: Exception = None):
        level = level.upper()
        rendered = message
        if context:
            rendered = f"{message} {orjson.dumps(context, option=orjson.OPT_SERIALIZE_NUMPY).decode()}"
        self.logger.log(getattr(logging, level, logging.INFO), rendered, exc_info=error)

        if not self.enabled:
            return

        log_entry = {
            "timestamp": datetime.now(timezone.utc),
            "level": level,
            "message": message,
            "context": orjson.loads(orjson.dumps(context or {}, option=orjson.OPT_SERIALIZE_NUMPY)),
        }

        if error:
            log_entry["error"] = str(error)
            log_entry["traceback"] = "".join(
                traceback.format_exception(type(error), error, error.__traceback__)
            )

        try:
            self.collection.insert_one(log_entry)
        except Exception as e:
            self.logger.warning("Failed to write log to MongoDB: %s", e)

    def info(self, message: str, context: dict = None):
        self.log("INFO", message, context)

    def error(self, message: str, error: Exception = None, context: dict = None):
        self.log("ERROR", message, context, error)

    def warning(self, message: str, context: dict = None):
        self.log("WARNING", message, context)

    def debug(self, message: str, context: dict = None):
        self.log("DEBUG", message, context)


# Global instance
run_logger = RunLogger()
