import json

from fastapi import APIRouter, HTTPException

from .. import experiments, schemas

router = APIRouter()


@router.get("/presets/", response_model=list[schemas.PresetInfo])
def read_presets():
    return experiments.list_presets()


@router.get("/presets/{name}")
def read_preset(name: str):
    if name not in experiments.PRESETS:
        raise HTTPException(status_code=404, detail="Preset not found")
    return json.loads(experiments.preset_path(name).read_text(encoding="utf-8"))
