"""Preload and linker sanitation: sealed baselines, idempotent repair, and
eviction of a preload-hijacking process end to end."""

from __future__ import annotations

import pytest

from mtdlite.adversary import RootkitActor
from mtdlite.environment import create_environment
from mtdlite.errors import IntegrityError
from mtdlite.mechanisms.libraries import (
    LibrariesMechanism,
    capture_baseline,
    linker_tampered,
    load_baseline,
    preload_tampered,
    restore_linker_reference,
    sanitize_preload,
    save_baseline,
)

from conftest import small_spec


@pytest.fixture
def env():
    return create_environment(small_spec(seed=11))


@pytest.fixture
def baseline(env):
    return capture_baseline(env)


class Ctx:
    now = 1.0
    alarm_behavior = "Rootkit"

    @staticmethod
    def journal(line):
        pass


def _inject(env):
    actor = RootkitActor(artifact_dir="/usr/lib/.rk")
    actor.start(env, 0.0)
    actor.step(env, 0.0, 1.0)
    assert actor.finished
    return actor


def test_capture_snapshots_clean_state(env, baseline):
    rt = env.runtime
    assert baseline.preload_path == rt.preload_path
    assert baseline.preload_content == rt.clean_preload_content
    assert baseline.linker_ref == rt.clean_linker_ref
    assert baseline.seal
    baseline.verify()


def test_seal_detects_any_field_change(baseline):
    baseline.preload_content = "evil.so"
    with pytest.raises(IntegrityError):
        baseline.verify()


def test_unsealed_baseline_refused(env, baseline):
    baseline.seal = ""
    with pytest.raises(IntegrityError):
        sanitize_preload(env, baseline)
    with pytest.raises(IntegrityError):
        restore_linker_reference(env, baseline)


def test_baseline_file_round_trip(env, baseline, tmp_path):
    path = tmp_path / "baseline.json"
    save_baseline(baseline, str(path))
    loaded = load_baseline(str(path))
    assert loaded == baseline
    # a corrupted file fails verification at load time
    doc = path.read_text().replace(baseline.preload_content, "evil.so")
    path.write_text(doc)
    with pytest.raises(IntegrityError):
        load_baseline(str(path))


def test_sanitize_preload_is_idempotent(env, baseline):
    assert sanitize_preload(env, baseline).changed is False
    env.write_file(baseline.preload_path, b"/usr/lib/.rk/libhook.so")
    assert preload_tampered(env, baseline)
    first = sanitize_preload(env, baseline)
    assert first.changed is True
    assert not preload_tampered(env, baseline)
    second = sanitize_preload(env, baseline)
    assert second.changed is False


def test_sanitize_recreates_deleted_preload(env, baseline):
    env.delete_file(baseline.preload_path)
    assert preload_tampered(env, baseline)
    report = sanitize_preload(env, baseline)
    assert report.changed is True
    assert report.detail == "preload recreated"
    got = env.read_file(baseline.preload_path).data
    assert got == baseline.preload_content.encode()


def test_linker_reference_patched_at_offset(env, baseline):
    data = bytearray(env.read_file(baseline.linker_path).data)
    off = baseline.linker_ref_offset
    ref_len = len(baseline.linker_ref)
    data[off:off + ref_len] = b"\x00" * ref_len
    env.write_file(baseline.linker_path, bytes(data))
    assert linker_tampered(env, baseline)
    report = restore_linker_reference(env, baseline)
    assert report.changed is True
    repaired = env.read_file(baseline.linker_path).data
    assert repaired[off:off + ref_len] == baseline.linker_ref.encode()
    # bytes outside the reference field are untouched
    assert repaired[:off] == bytes(data[:off])
    assert repaired[off + ref_len:] == bytes(data[off + ref_len:])
    assert restore_linker_reference(env, baseline).changed is False


def test_missing_linker_is_never_fabricated(env, baseline):
    env.delete_file(baseline.linker_path)
    with pytest.raises(IntegrityError):
        restore_linker_reference(env, baseline)
    assert not env.file_exists(baseline.linker_path)


def test_sanitation_evicts_preload_hijacker(env, baseline):
    actor = _inject(env)
    parent = "/usr/lib"
    assert "/usr/lib/.rk" not in env.list_dir(parent)[0]
    assert "/usr/lib/.rk" in env.list_dir(parent, raw=True)[0]
    assert actor.emitting(env)

    mech = LibrariesMechanism(baseline)
    mech.start(env, Ctx())
    assert mech.done(env, 1.0)
    out = mech.finish(env, 1.0)
    assert out.status == "mitigated"
    assert out.metrics == {"preload_restored": 1, "linker_restored": 1}
    assert not preload_tampered(env, baseline)
    assert not linker_tampered(env, baseline)
    # hiding keyed on the hijacked preload content is no longer in effect
    assert "/usr/lib/.rk" in env.list_dir(parent)[0]
    assert not actor.emitting(env)


def test_mechanism_noop_on_clean_system(env, baseline):
    mech = LibrariesMechanism(baseline)
    mech.start(env, Ctx())
    out = mech.finish(env, 1.0)
    assert out.status == "no-op"
    assert out.metrics == {"preload_restored": 0, "linker_restored": 0}
