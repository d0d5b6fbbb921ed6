import pytest

from mgsim import parse_scenario, run_scenario
from mgsim.corpus import ALL, CORPUS, load
from mgsim.errors import ParseError
from mgsim.fuzz import MAX_GUARDS, MAX_PRINCIPALS, MAX_STEPS, generate_scenario
from mgsim.scenario import Ref
from mgsim.workloads import WORKLOADS, kv_store, tls_sessions

LOCK_PATTERN = """
g = mg_create()
buf = mg_mmap(g, 65536, RW)
key = mg_malloc(g, 32)
mg_lock(g)
read key
expect fault locked
mg_unlock(g)
read key
"""


def test_empty_file_has_no_threads():
    sc = parse_scenario("")
    assert sc.threads == {} and sc.statement_count() == 0
    assert run_scenario(sc).ok


def test_lock_pattern_parses_to_eight_statements():
    sc = parse_scenario(LOCK_PATTERN)
    assert list(sc.threads) == ["main"]
    assert sc.statement_count() == 8


def test_undeclared_name():
    with pytest.raises(ParseError) as exc:
        parse_scenario("read nowhere\n")
    assert exc.value.line == 1


@pytest.mark.parametrize(
    "text",
    [
        "x = mg_frobnicate()",
        "read",
        "expect fault sideways",
        "expect error NoSuchThing",
        "thread a:\nthread a:",
        "thread a:\n  read 0x10",
        "spawn t label {} caps {}",
        "config flavour=vanilla",
        "config backend=sparc",
        "g = mg_create(}",
        "fork t",
    ],
)
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse_scenario(text)


def test_statement_shapes():
    sc = parse_scenario(
        "thread main:\n"
        "  g = mg_create(mte)\n"
        "  b = mg_mmap(g, 0x2000, RO)\n"
        "  write b+16 4 0x7f   # comment\n"
        "  spawn t label {g, 3} caps {g+, 3+-}\n"
        "  join t normal\n"
        "thread t:\n"
        "  exec b\n"
    )
    main = sc.threads["main"]
    assert [s.kind for s in main] == ["call", "call", "access", "spawn", "join"]
    assert main[2].args == (Ref("b", 16), 4, 0x7F)
    assert main[1].args[1] == 0x2000


def test_key_protection_runs():
    r = run_scenario(parse_scenario(load("key_protection.mg")))
    assert r.ok
    assert len(r.fault_log) == 1 and r.fault_log[0].endswith("read locked")
    assert r.exits["main"].startswith("fault")


def test_cross_thread_theft():
    r = run_scenario(parse_scenario(load("cross_thread.mg")))
    assert r.ok and r.exits["worker"].startswith("fault") and r.exits["main"] == "normal"
    assert r.fault_log[0].endswith("label")


@pytest.mark.parametrize("name", sorted(ALL))
def test_corpus_passes_in_lockstep(name):
    r = run_scenario(parse_scenario(load(name)), oracle=True)
    assert r.ok, r.failures
    assert r.oracle_checks > 0 and not r.divergences


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_attack_corpus_blocks_violation(name):
    text = load(name)
    assert "expect fault" in text and "expect unchanged" in text
    r = run_scenario(parse_scenario(text))
    assert r.ok and r.fault_log


def test_workload_files_match_generator():
    for name, make in WORKLOADS.items():
        assert load(name + ".mg") == make()


def test_session_guards_evict_single_guard_does_not():
    many = run_scenario(parse_scenario(tls_sessions(20, True)))
    one = run_scenario(parse_scenario(tls_sessions(20, False)))
    assert many.ok and one.ok
    assert many.counters["domainEvictions"] > 0
    assert one.counters["domainEvictions"] == 0


def test_kv_store_private_guards():
    r = run_scenario(parse_scenario(kv_store(3)), oracle=True)
    assert r.ok and not r.divergences and len(r.checksums) == 3


def test_expectation_mismatch_is_failure():
    r = run_scenario(parse_scenario("g = mg_create()\nexpect error PermissionDenied\n"))
    assert not r.ok


def test_unexpected_fault_strict_vs_lenient():
    text = "read 0x10\n"
    assert not run_scenario(parse_scenario(text)).ok
    assert run_scenario(parse_scenario(text), strict=False).ok


def test_fault_kills_thread_and_skips_rest():
    r = run_scenario(parse_scenario("read 0x10\nexpect fault page-perm\ng = mg_create()\n"))
    assert r.ok and r.skipped["main"] == 1 and r.exits["main"] == "fault(1)"


def test_deadlock_detected():
    r = run_scenario(parse_scenario("thread main:\n  fork a\n  join a\nthread a:\n  join main\n"))
    assert not r.ok and any("deadlock" in f for f in r.failures)


def test_spawn_twice_is_error():
    text = "thread main:\n  spawn t label {} caps {}\n  spawn t label {} caps {}\n  expect error ParseError\nthread t:\n  mg_alloc_tag()\n"
    r = run_scenario(parse_scenario(text))
    assert r.ok


def test_report_determinism():
    sc = parse_scenario(generate_scenario(12))
    outs = {run_scenario(sc, seed=3, strict=False).serialize() for _ in range(3)}
    assert len(outs) == 1


def test_seed_changes_interleaving():
    sc = parse_scenario(load("kv_store.mg"))
    outs = {run_scenario(sc, seed=s).counters["contextSwitches"] for s in range(6)}
    assert len(outs) > 1


def test_fuzz_bounds():
    for seed in range(50):
        text = generate_scenario(seed)
        assert text == generate_scenario(seed)
        sc = parse_scenario(text)
        assert sc.statement_count() <= MAX_STEPS
        assert len(sc.threads) <= MAX_PRINCIPALS
        creates = sum(1 for b in sc.threads.values() for s in b if s.name == "mg_create")
        assert creates <= MAX_GUARDS
