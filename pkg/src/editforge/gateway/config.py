from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from typing import Optional

from ..errors import ConfigInvalid

ROLES = ("generator", "editor", "verifier", "judge", "aesthetic", "face_embed")

# Non-paper decoding defaults, one per role.
DEFAULT_TEMPERATURE = {"generator": 0.7, "verifier": 0.0, "judge": 0.0}


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str = ""
    api_key: Optional[str] = field(default=None, repr=False, compare=False)
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 1.0
    rate_limit: Optional[float] = None
    max_in_flight: int = 8

    def __post_init__(self):
        if self.timeout <= 0:
            raise ConfigInvalid(f"timeout must be > 0, got {self.timeout}")
        if self.backoff_base <= 0:
            raise ConfigInvalid(f"backoff_base must be > 0, got {self.backoff_base}")
        if self.max_retries < 0:
            raise ConfigInvalid(f"max_retries must be >= 0, got {self.max_retries}")
        if self.max_in_flight < 1:
            raise ConfigInvalid(f"max_in_flight must be >= 1, got {self.max_in_flight}")
        if self.rate_limit is not None and self.rate_limit <= 0:
            raise ConfigInvalid(f"rate_limit must be > 0 when set, got {self.rate_limit}")

    @classmethod
    def from_mapping(cls, role: str, data: dict) -> "EndpointConfig":
        """Build from a config-file section; the key is read from the environment only.

        The variable is ``EDITFORGE_<ROLE>_API_KEY`` unless the section names another
        one under ``api_key_env``. A literal ``api_key`` in the file is refused.
        """
        data = dict(data)
        if "api_key" in data:
            raise ConfigInvalid(f"{role}: api_key must come from the environment, not the config file")
        env_name = data.pop("api_key_env", f"EDITFORGE_{role.upper()}_API_KEY")
        known = {f.name for f in fields(cls)} - {"api_key"}
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(f"{role}: unknown endpoint keys {sorted(unknown)}")
        if "base_url" not in data:
            raise ConfigInvalid(f"{role}: base_url is required")
        try:
            return cls(api_key=os.environ.get(env_name), **data)
        except TypeError as exc:
            raise ConfigInvalid(f"{role}: {exc}") from exc

    def public_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "api_key"}
