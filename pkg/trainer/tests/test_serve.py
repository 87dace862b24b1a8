from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from bridgelab_trainer.data import SftExample
from bridgelab_trainer.model import ArtifactError
from bridgelab_trainer.serve import create_app, export_student, load_descriptor
from bridgelab_trainer.train import TrainConfig, train_sft

RECORD = SftExample(
    id="r1",
    prompt="Rewrite: Document 1: the copper key.",
    target="Document 1: copper key found.",
)


@pytest.fixture(scope="module")
def artifact(tmp_path_factory):
    path = tmp_path_factory.mktemp("artifact") / "student.pt"
    train_sft(
        [RECORD],
        TrainConfig(epochs=500, learning_rate=3e-3, seed=3, output_path=str(path),
                    target_loss=0.01),
    )
    return path


class TestExport:
    def test_descriptor_round_trip(self, artifact, tmp_path):
        desc_path = tmp_path / "student.json"
        export_student(artifact, "http://127.0.0.1:8731", "bridgelab-student", desc_path)
        descriptor = load_descriptor(desc_path)
        assert descriptor == {"base_url": "http://127.0.0.1:8731", "model_id": "bridgelab-student"}

    def test_missing_artifact_errors(self, tmp_path):
        with pytest.raises(ArtifactError):
            export_student(tmp_path / "absent.pt", "http://x", "m", tmp_path / "d.json")

    def test_descriptor_schema_enforced(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"base_url": "http://x"}))
        with pytest.raises(ValueError, match="model_id"):
            load_descriptor(bad)


class TestServedEndpoint:
    def test_openai_compatible_chat_completions(self, artifact):
        client = TestClient(create_app(artifact, model_id="bridgelab-student"))
        resp = client.post(
            "/chat/completions",
            json={
                "model": "bridgelab-student",
                "messages": [{"role": "user", "content": RECORD.prompt}],
                "temperature": 0.0,
                "max_tokens": 128,
            },
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["object"] == "chat.completion"
        # Memorized target reproduced verbatim at temperature 0.
        assert body["choices"][0]["message"]["content"] == RECORD.target

    def test_unknown_model_404(self, artifact):
        client = TestClient(create_app(artifact, model_id="bridgelab-student"))
        resp = client.post(
            "/chat/completions",
            json={"model": "other", "messages": [{"role": "user", "content": "x"}]},
        )
        assert resp.status_code == 404

    def test_nonzero_temperature_rejected(self, artifact):
        client = TestClient(create_app(artifact, model_id="bridgelab-student"))
        resp = client.post(
            "/chat/completions",
            json={
                "model": "bridgelab-student",
                "messages": [{"role": "user", "content": "x"}],
                "temperature": 0.7,
            },
        )
        assert resp.status_code == 400
