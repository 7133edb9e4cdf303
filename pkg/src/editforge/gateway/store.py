"""Content-addressed directory of image files, named ``<sha256>.<ext>``."""
from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from ..errors import DecodeFailure, StoreUnavailable
from ..models import ImageRef, sha256_hex

_EXT = {"PNG": "png", "JPEG": "jpg", "WEBP": "webp", "GIF": "gif", "BMP": "bmp", "TIFF": "tif"}


def sniff_image(data: bytes) -> tuple[str, int, int]:
    """Return (extension, width, height) or raise DecodeFailure."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.verify()
        with Image.open(io.BytesIO(data)) as im:
            return _EXT.get(im.format, (im.format or "bin").lower()), im.size[0], im.size[1]
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeFailure(f"returned bytes are not a readable image: {exc}") from exc


class ArtifactStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path_for(self, content_hash: str, ext: str) -> Path:
        return self.root / f"{content_hash}.{ext}"

    def put(self, data: bytes) -> ImageRef:
        ext, width, height = sniff_image(data)
        digest = sha256_hex(data)
        target = self.path_for(digest, ext)
        try:
            if not target.exists():
                self.root.mkdir(parents=True, exist_ok=True)
                fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".part")
                with os.fdopen(fd, "wb") as f:
                    f.write(data)
                os.replace(tmp, target)
        except OSError as exc:
            raise StoreUnavailable(f"cannot write to artifact store {self.root}: {exc}") from exc
        return ImageRef(uri=str(target), width=width, height=height, content_hash=digest)

    def put_file(self, path: str | Path) -> ImageRef:
        return self.put(Path(path).read_bytes())

    def __contains__(self, content_hash: str) -> bool:
        return any(self.root.glob(f"{content_hash}.*"))
