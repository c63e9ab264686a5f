"""Sandbox environment: determinism, clock discipline, file and process
semantics, addressing, and the rolling open-file window."""

from __future__ import annotations

import ipaddress

import pytest

from mtdlite.environment import create_environment
from mtdlite.errors import (
    ClockError,
    CollisionError,
    NoSuchProcess,
    PathError,
    RangeError,
    RefusedWhitelisted,
)

from conftest import small_spec


def test_same_seed_same_digest():
    a = create_environment(small_spec(seed=99))
    b = create_environment(small_spec(seed=99))
    assert a.state_digest() == b.state_digest()


def test_different_seed_different_digest():
    a = create_environment(small_spec(seed=1))
    b = create_environment(small_spec(seed=2))
    assert a.state_digest() != b.state_digest()


def test_replay_is_bit_exact():
    def drive(env):
        env.tick(1.0)
        pid = env.spawn_process("worker", 50.0)
        env.create_file("/data/new.bin", size=10, data=b"0123456789")
        env.record_file_open(pid, "/data/new.bin")
        env.encrypt_file("/data/new.bin", pid=pid)
        env.tick(2.5)
        env.rename_file("/data/new.bin", "new.enc")
        env.assign_ip(env.rng.choice(sorted(
            set(env.host_range()) - env.scan_active_hosts())))
        return env.state_digest()

    assert drive(create_environment(small_spec(seed=4))) == \
        drive(create_environment(small_spec(seed=4)))


def test_reads_do_not_mutate_state(env):
    before = env.state_digest()
    env.list_dir("/data")
    list(env.walk("/data"))
    list(env.iter_files("/data"))
    env.list_processes()
    env.scan_active_hosts()
    env.check_connectivity()
    env.file_count()
    assert env.state_digest() == before


def test_clock_is_explicit_and_monotone(env):
    assert env.now == 0.0
    env.tick(5.0)
    assert env.now == 5.0
    with pytest.raises(ClockError):
        env.tick(-1.0)
    assert env.now == 5.0


def test_file_lifecycle(env):
    env.create_file("/data/a.txt", size=3, data=b"abc")
    f = env.read_file("/data/a.txt")
    assert (f.size, f.data, f.encrypted) == (3, b"abc", False)
    env.encrypt_file("/data/a.txt")
    f2 = env.read_file("/data/a.txt")
    assert f2.encrypted and f2.digest != f.digest
    new_path = env.rename_file("/data/a.txt", "b.bin")
    assert new_path == "/data/b.bin"
    assert not env.file_exists("/data/a.txt")
    assert env.file_exists("/data/b.bin")
    env.delete_file("/data/b.bin")
    assert not env.file_exists("/data/b.bin")
    with pytest.raises(PathError):
        env.read_file("/data/b.bin")
    with pytest.raises(PathError):
        env.delete_file("/data/missing.txt")


def test_create_over_existing_path_refused(env):
    env.create_file("/data/x.txt", size=1, data=b"x")
    with pytest.raises(PathError):
        env.create_file("/data/x.txt", size=1, data=b"y")


def test_rename_collision_refused(env):
    env.create_file("/data/x.txt", size=1, data=b"x")
    env.create_file("/data/y.txt", size=1, data=b"y")
    with pytest.raises(PathError):
        env.rename_file("/data/x.txt", "y.txt")


def test_read_returns_a_copy(env):
    env.create_file("/data/c.txt", size=2, data=b"cc")
    before = env.state_digest()
    snapshot = env.read_file("/data/c.txt")
    snapshot.size = 999
    snapshot.encrypted = True
    assert env.read_file("/data/c.txt").size == 2
    assert env.state_digest() == before


def test_listing_is_sorted_and_count_matches(env):
    dirs, files = env.list_dir("/data")
    assert dirs == sorted(dirs)
    assert files == sorted(files)
    total = sum(len(fs) for _, _, fs in env.walk("/data"))
    assert total == 24


def test_hiding_filters_listings_but_not_raw(env):
    env.mkdir("/data/.secret")
    env.create_file("/data/.secret/rk.so", size=2, data=b"rk")
    env.write_file(env.runtime.preload_path, b"/data/.secret/rk.so")
    env.runtime.hiding["/data/.secret/rk.so"] = ["/data/.secret"]
    dirs, _ = env.list_dir("/data")
    assert "/data/.secret" not in dirs
    raw_dirs, _ = env.list_dir("/data", raw=True)
    assert "/data/.secret" in raw_dirs
    # restoring the preload content disables the hook
    env.write_file(env.runtime.preload_path,
                   env.runtime.clean_preload_content.encode()
                   if isinstance(env.runtime.clean_preload_content, str)
                   else env.runtime.clean_preload_content)
    dirs, _ = env.list_dir("/data")
    assert "/data/.secret" in dirs


def test_process_lifecycle(env):
    pid = env.spawn_process("mal", 80.0)
    assert env.process_alive(pid)
    result = env.kill_process(pid)
    assert result.pid == pid and result.killed_at == env.now
    assert not env.process_alive(pid)
    with pytest.raises(NoSuchProcess):
        env.kill_process(pid)
    with pytest.raises(NoSuchProcess):
        env.kill_process(31337)
    sensor = next(p.pid for p in env.list_processes() if p.name == "sensor")
    with pytest.raises(RefusedWhitelisted):
        env.kill_process(sensor)


def test_dead_process_reports_zero_load(env):
    pid = env.spawn_process("mal", 80.0)
    env.record_file_open(pid, "/data/whatever")
    env.kill_process(pid)
    rec = next(p for p in env.list_processes() if p.pid == pid)
    assert not rec.alive
    assert rec.cpu_percent == 0.0
    assert rec.files_opened_last_minute == 0


def test_open_file_window_rolls_over_sixty_seconds(env):
    pid = env.spawn_process("worker", 20.0)
    for _ in range(10):
        env.record_file_open(pid, "/data/f")
        env.tick(1.0)
    rec = next(p for p in env.list_processes() if p.pid == pid)
    assert rec.files_opened_last_minute == 10
    env.tick(49.0)  # t=59: every open still inside (t-60, t]
    rec = next(p for p in env.list_processes() if p.pid == pid)
    assert rec.files_opened_last_minute == 10
    env.tick(2.0)  # t=61: opens at t=0 and t=1 age out
    rec = next(p for p in env.list_processes() if p.pid == pid)
    assert rec.files_opened_last_minute == 8
    env.tick(120.0)
    rec = next(p for p in env.list_processes() if p.pid == pid)
    assert rec.files_opened_last_minute == 0
    assert env.opens_total(pid) == 10


def test_network_scan_and_assignment(env):
    active = env.scan_active_hosts()
    assert env.net.device_ip in active
    assert env.net.gateway_ip in active
    assert ipaddress.IPv4Address("192.168.1.20") in active
    old = env.net.device_ip
    free = sorted(set(env.host_range()) - active)[0]
    result = env.assign_ip(free)
    assert result.previous == str(old)
    assert env.net.device_ip == free
    assert old not in env.scan_active_hosts()
    with pytest.raises(RangeError):
        env.assign_ip("10.9.9.9")
    with pytest.raises(CollisionError):
        env.assign_ip(env.net.gateway_ip)


def test_connectivity_reflects_dead_addresses():
    spec = small_spec(seed=3)
    spec.network.dead_addresses = ["192.168.1.77"]
    env = create_environment(spec)
    assert env.check_connectivity()
    env.assign_ip("192.168.1.77")
    assert not env.check_connectivity()


def test_audit_events_are_ordered(env):
    start = len(env.events_since(0))
    env.create_file("/data/z.txt", size=1, data=b"z")
    env.encrypt_file("/data/z.txt")
    env.record_event("custom", detail="note")
    tail = env.events_since(0)[start:]
    assert [e.kind for e in tail] == ["file_created", "file_encrypted", "custom"]
    seqs = [e.seq for e in env.events_since(0)]
    assert seqs == sorted(seqs)
