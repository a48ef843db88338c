from random import Random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from teefuzz.templates import parse_templates
from teefuzz.testcase import (
    ArgValue,
    Syscall,
    TestCase,
    generate_testcase,
    mutate_testcase,
    validate_testcase,
)


def test_generate_produces_valid_testcase(templates, rng):
    tc = generate_testcase(templates, rng, max_len=16)
    assert validate_testcase(tc, templates, 16) == []
    assert 1 <= len(tc) <= 16


def test_generation_deterministic(templates):
    a = generate_testcase(templates, Random(42), 16)
    b = generate_testcase(templates, Random(42), 16)
    assert a == b


def test_generation_seed_sensitivity(templates):
    a = generate_testcase(templates, Random(1), 16)
    b = generate_testcase(templates, Random(2), 16)
    assert a != b  # overwhelmingly likely; a collision would be a red flag


def test_max_len_one_yields_single_call(templates):
    for seed in range(20):
        tc = generate_testcase(templates, Random(seed), 1)
        assert len(tc) == 1
        assert validate_testcase(tc, templates, 1) == []


def test_generation_closure_bulk(templates):
    rng = Random(7)
    for _ in range(2_000):
        tc = generate_testcase(templates, rng, 24)
        assert validate_testcase(tc, templates, 24) == []


def test_mutation_closure_bulk(templates, seed_corpus):
    rng = Random(11)
    pool = list(seed_corpus)
    for i in range(2_000):
        tc = mutate_testcase(pool[i % len(pool)], templates, rng, 24)
        assert validate_testcase(tc, templates, 24) == [], tc
        if len(pool) < 64:
            pool.append(tc)


def test_mutation_always_changes_the_testcase(templates, seed_corpus):
    rng = Random(3)
    for seed in seed_corpus:
        for _ in range(25):
            assert mutate_testcase(seed, templates, rng, 64) != seed


def test_single_call_seed_never_becomes_empty(templates):
    rng = Random(5)
    seed = generate_testcase(templates, Random(0), 1)
    for _ in range(200):
        out = mutate_testcase(seed, templates, rng, 4)
        assert len(out) >= 1
        assert validate_testcase(out, templates, 4) == []


def test_enum_mutation_stays_in_allowed_set(templates):
    # mutate an AllocateOperation-only case many times; any enum arg must
    # stay within its template's allowed values (checked via the validator)
    rng = Random(9)
    tc = TestCase(
        (
            Syscall(
                templates.by_name["TEE_AllocateOperation"].ordinal,
                (
                    ArgValue.const_enum(0x10),
                    ArgValue.const_enum(0),
                    ArgValue.scalar32(64),
                ),
            ),
        )
    )
    for _ in range(300):
        tc2 = mutate_testcase(tc, templates, rng, 8)
        assert validate_testcase(tc2, templates, 8) == []


def test_validator_flags_forward_reference(templates):
    free = templates.by_name["TEE_FreeOperation"]
    tc = TestCase((Syscall(free.ordinal, (ArgValue.resource_ref(0),)),))
    violations = validate_testcase(tc, templates)
    assert any("forward reference" in v for v in violations)


def test_validator_flags_wrong_producer_kind(templates):
    alloc_obj = templates.by_name["TEE_AllocateTransientObject"]
    free_op = templates.by_name["TEE_FreeOperation"]
    tc = TestCase(
        (
            Syscall(
                alloc_obj.ordinal,
                (ArgValue.const_enum(0xA0), ArgValue.scalar32(64)),
            ),
            Syscall(free_op.ordinal, (ArgValue.resource_ref(0),)),
        )
    )
    violations = validate_testcase(tc, templates)
    assert any("does not produce Operation" in v for v in violations)


def test_validator_flags_arity_mismatch(templates):
    malloc = templates.by_name["TEE_Malloc"]
    tc = TestCase((Syscall(malloc.ordinal, (ArgValue.scalar32(1),)),))
    violations = validate_testcase(tc, templates)
    assert any("arity" in v for v in violations)


def test_validator_flags_unknown_ordinal(templates):
    tc = TestCase((Syscall(999, ()),))
    assert any("unknown ordinal" in v for v in validate_testcase(tc, templates))


def test_validator_flags_empty_testcase(templates):
    assert validate_testcase(TestCase(()), templates) == ["empty test case"]


def test_validator_flags_overlong_testcase(templates):
    malloc = templates.by_name["TEE_Malloc"]
    call = Syscall(malloc.ordinal, (ArgValue.scalar32(1), ArgValue.scalar32(0)))
    tc = TestCase(tuple([call] * 5))
    assert any("exceeds max" in v for v in validate_testcase(tc, templates, 4))


def test_validator_flags_enum_violation(templates):
    alloc = templates.by_name["TEE_AllocateOperation"]
    tc = TestCase(
        (
            Syscall(
                alloc.ordinal,
                (
                    ArgValue.const_enum(0x99),
                    ArgValue.const_enum(0),
                    ArgValue.scalar32(64),
                ),
            ),
        )
    )
    assert any("not allowed" in v for v in validate_testcase(tc, templates))


@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
@settings(max_examples=60, deadline=None)
def test_generate_then_mutate_closure_property(seed, max_len):
    ts = parse_templates(
        "mk(n:s32[0..100]) -> T\n"
        "use(t:res:T, e:enum{1,2,3})\n"
        "plain(b:buf[8], w:s64)\n"
    )
    rng = Random(seed)
    tc = generate_testcase(ts, rng, max_len)
    assert validate_testcase(tc, ts, max_len) == []
    for _ in range(5):
        tc = mutate_testcase(tc, ts, rng, max_len)
        assert validate_testcase(tc, ts, max_len) == []
