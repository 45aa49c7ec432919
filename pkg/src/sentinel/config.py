"""Service configuration: YAML file plus environment overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import yaml

CONFIG_ENV = "SENTINEL_CONFIG"
API_TOKEN_ENV = "SENTINEL_API_TOKEN"


@dataclass
class Config:
    data_dir: Path = Path("data")
    llm_backend: str = "rule-based"  # rule-based | scripted | remote
    llm_endpoint: str = "https://api.openai.com/v1"
    llm_model: str = "gpt-4"
    llm_fixtures: Optional[Path] = None
    extraction_samples: int = 3
    extraction_temperature: float = 0.7
    feed_fixtures: Optional[Path] = None
    feed_overrides: Optional[Path] = None
    feed_interval_minutes: float = 15.0
    feed_poll: bool = False
    host: str = "127.0.0.1"
    port: int = 8787
    auto_confirm: bool = False
    history_window: int = 20
    queue_depth: int = 4
    default_limit: int = 100
    cdb_list_name: str = "sentinel-blacklist"
    cdb_value: str = "sentinel"
    siem: str = "mock"  # mock | wazuh
    wazuh_url: str = ""
    wazuh_user: str = "wazuh"
    wazuh_password: str = ""
    fixed_clock: Optional[str] = None
    api_token: Optional[str] = None
    template_dir: Optional[Path] = None

    @property
    def store_path(self) -> Path:
        return self.data_dir / "store"

    @property
    def audit_path(self) -> Path:
        return self.data_dir / "audit.log"

    @property
    def sessions_dir(self) -> Path:
        return self.data_dir / "sessions"


_PATH_FIELDS = {"data_dir", "llm_fixtures", "feed_fixtures", "feed_overrides", "template_dir"}


def load_config(path: Optional[Path] = None) -> Config:
    """Defaults <- YAML file <- environment, in increasing precedence."""
    config = Config()
    chosen = path or os.environ.get(CONFIG_ENV)
    if chosen:
        doc = yaml.safe_load(Path(chosen).read_text("utf-8")) or {}
        for key, value in doc.items():
            if not hasattr(config, key):
                raise ValueError(f"unknown config key: {key}")
            if key in _PATH_FIELDS and value is not None:
                value = Path(value)
            setattr(config, key, value)
    token = os.environ.get(API_TOKEN_ENV)
    if token:
        config.api_token = token
    return config
