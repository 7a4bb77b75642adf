from fastapi import APIRouter, HTTPException, UploadFile, File, Query
from typing import Optional
import os
import logging

from losses import sample_metrics
from pointcloud_io import infer_format, parse_pointcloud
from samplers_classic import apply_sampler, as_cloud
from schemas import PointFormat, PointsRequest, SamplerName
from utils import serializers

router = APIRouter(prefix="/sampling", tags=["Sampling"])

logger = logging.getLogger(__name__)

# Samplers that need no trained weights
ALLOWED_SAMPLERS = {SamplerName.fps.value, SamplerName.random.value, SamplerName.voxel.value}

ALLOWED_FILE_EXTENSIONS = {".xyz", ".txt", ".pts", ".csv"}

# Maximum upload size: 20 MB
MAX_FILE_SIZE = 20 * 1024 * 1024


def _sample(cloud, sampler: str, m: int, seed: int, source: str) -> dict:
    if sampler not in ALLOWED_SAMPLERS:
        allowed = ", ".join(sorted(ALLOWED_SAMPLERS))
        raise HTTPException(status_code=400, detail=f"Invalid sampler: '{sampler}'. Allowed samplers are: {allowed}")
    idx = apply_sampler(sampler, cloud, m, seed=seed)
    sample = cloud[idx]
    metrics = sample_metrics(sample, cloud, sampler, source=source)
    logger.info(f"[SAMPLING] {source}: {cloud.shape[0]} -> {m} points with {sampler}")
    return {
        "sampler": sampler,
        "n": int(cloud.shape[0]),
        "m": m,
        "indices": [int(i) for i in idx],
        "points": serializers.cloud_to_list(sample),
        "metrics": serializers.metrics_to_dict(metrics),
    }


@router.post("/upload")
async def upload_pointcloud(
    file: UploadFile = File(...),
    sampler: str = Query(SamplerName.fps.value),
    m: int = Query(..., ge=1),
    seed: int = Query(0),
    format: Optional[PointFormat] = Query(None),
):
    """
    Downsample an uploaded xyz/csv point file with a classic sampler.
    Returns the chosen indices, the sampled points and their metrics document.
    """
    if not file.filename or not file.filename.strip():
        raise HTTPException(status_code=400, detail="File name is required")

    file_ext = os.path.splitext(file.filename)[1].lower()
    if format is None and file_ext not in ALLOWED_FILE_EXTENSIONS:
        allowed_ext_str = ", ".join(sorted(ALLOWED_FILE_EXTENSIONS))
        logger.error(f"[SAMPLING_UPLOAD] Invalid file extension: '{file_ext}' for fileName: {file.filename}")
        raise HTTPException(status_code=400, detail=f"Invalid file type. Allowed extensions are: {allowed_ext_str}")

    content = await file.read()
    if len(content) == 0:
        raise HTTPException(status_code=400, detail="File is empty. Please upload a valid point file.")
    if len(content) > MAX_FILE_SIZE:
        raise HTTPException(status_code=400, detail=f"File size exceeds maximum allowed size ({MAX_FILE_SIZE // (1024 * 1024)} MB)")

    try:
        text = content.decode("utf-8")
    except UnicodeDecodeError:
        raise HTTPException(status_code=400, detail="Point files must be UTF-8 text")

    # format errors surface through the toolkit error handler with their line number
    cloud = parse_pointcloud(text, format or infer_format(file.filename))
    logger.info(f"[SAMPLING_UPLOAD] Parsed {cloud.shape[0]} points from {file.filename}")
    return _sample(cloud, sampler, m, seed, file.filename)


@router.post("/points")
def sample_points(payload: PointsRequest):
    """Downsample a JSON list of points"""
    cloud = as_cloud(payload.points, "points")
    return _sample(cloud, payload.sampler.value, payload.m, payload.seed, "request")
