import numpy as np
import pytest

from diffusion_auctions import (
    ArgmaxRule,
    LblevAuction,
    PowerRule,
    check_allocation_monotonicity,
    check_ddsic_deviations,
    check_diffusion_constraint,
    check_ic_deviations,
    check_ir,
    check_neighbor_misreport,
    check_payment_identity,
    check_ta_equivalence,
    make_grid,
    network_from_edges,
    random_tree_instance,
    replay_witness,
    truthful_profile,
    verify_mechanism,
)
from diffusion_auctions import fixtures
from diffusion_auctions.mutants import DESIGNATED, make_mutant
from diffusion_auctions.rc_example import RcExampleAuction, fig_rc_instance
from diffusion_auctions.verify import CORE_CONDITIONS, random_exponents

from oracles import random_dag_edges

STRUCTURAL = ("monotonicity", "payment-identity", "diffusion-constraint")


def run_all(mech, inst, conditions=CORE_CONDITIONS + ("ic",), size=64, seed=0):
    grid = make_grid(inst.reports, size=size, seed=seed)
    return {r.condition: r
            for r in verify_mechanism(mech, inst.net, inst.reports, grid, conditions)}


class TestLblevPassesEverything:
    def test_worked_example(self):
        inst = fixtures.fig_lblev_instance()
        reports = run_all(LblevAuction(inst.exponents), inst)
        assert all(r.passed for r in reports.values())

    def test_random_trees_sound_checks_and_consistency(self):
        """Monotonicity, the payment identity, and participation are solid
        for every exponent vector; the forwarding checks can genuinely
        fail for heterogeneous exponents (see TestExponentWithholding),
        but always in lockstep with each other and with ddsic."""
        rng = np.random.default_rng(17)
        for k in range(15):
            inst = random_tree_instance(int(rng.integers(3, 13)), rng)
            mech = LblevAuction(random_exponents(inst.net.agents, rng))
            reports = run_all(mech, inst, seed=k)
            for cond in ("monotonicity", "payment-identity", "ir"):
                assert reports[cond].passed, cond
            structural = all(reports[c].passed for c in STRUCTURAL)
            assert structural == reports["ddsic"].passed
            if not reports["ddsic"].passed:
                assert replay_witness(mech, inst.net, inst.reports, reports["ddsic"])

    def test_unit_exponents_pass_everything(self):
        # the unit-exponent auction is immune to the withholding exploit:
        # dropping bidders can never raise a second price
        rng = np.random.default_rng(19)
        for k in range(10):
            inst = random_tree_instance(int(rng.integers(3, 13)), rng)
            reports = run_all(LblevAuction(None), inst, seed=k)
            failing = [c for c, r in reports.items() if not r.passed]
            assert not failing, failing


class TestExponentWithholding:
    """Regression pin for a real incentive failure the checker uncovered:
    with per-agent exponents, an on-path forwarder can profit by cutting
    the top-scoring child, because the withheld child changes which
    exponent ratio prices the level.  Uniform exponents cannot exhibit
    this (a second price only drops when bidders leave)."""

    VALUES = {1: 35.833, 2: 86.204, 3: 34.882, 4: 99.107, 5: 56.577}
    EXPONENTS = {1: 1.092, 2: 2.147, 3: 2.151, 4: 1.787, 5: 1.198}

    def instance(self):
        net = network_from_edges([(0, 1), (1, 2), (1, 3), (1, 4), (4, 5)])
        return net, truthful_profile(net, self.VALUES)

    def test_withholding_is_profitable_by_direct_execution(self):
        net, profile = self.instance()
        mech = LblevAuction(self.EXPONENTS)
        truthful = mech.run(net, profile)
        u_full = truthful.utility(1, self.VALUES[1])
        withheld = profile.replace(1, neighbors=frozenset({3, 4}))
        u_cut = mech.run(net, withheld).utility(1, self.VALUES[1])
        assert truthful.winner == 2
        assert u_full == pytest.approx(45.857, abs=1e-3)
        assert u_cut == pytest.approx(71.915, abs=1e-3)
        assert u_cut > u_full + 20.0

    def test_checker_flags_exactly_the_forwarding_conditions(self):
        net, profile = self.instance()
        mech = LblevAuction(self.EXPONENTS)
        grid = make_grid(profile, size=64)
        reports = {r.condition: r
                   for r in verify_mechanism(mech, net, profile, grid)}
        assert reports["monotonicity"].passed
        assert reports["payment-identity"].passed
        assert reports["ir"].passed
        assert not reports["diffusion-constraint"].passed
        assert not reports["ddsic"].passed
        witness = reports["ddsic"].witness
        assert witness.agent == 1
        assert witness.subset == (3, 4)
        assert replay_witness(mech, net, profile, reports["ddsic"])

    def test_uniform_exponent_variant_is_clean(self):
        net, profile = self.instance()
        reports = {r.condition: r
                   for r in verify_mechanism(LblevAuction({i: 2.0 for i in net.agents}),
                                             net, profile, make_grid(profile, size=64))}
        assert all(r.passed for r in reports.values())


class TestRcExampleFixture:
    def test_all_checks_pass(self):
        inst = fig_rc_instance()
        reports = run_all(RcExampleAuction(), inst)
        assert all(r.passed for r in reports.values())

    def test_allocation_steps_of_the_sweeping_agent(self):
        # agent 3's allocation climbs 0 -> 1/3 -> 2/3 as its bid passes
        # the figure bids of the two other first-level agents
        inst = fig_rc_instance()
        mech = RcExampleAuction()
        cut = inst.reports.replace(1, neighbors=frozenset())
        values = {2.0: 0.0, 5.0: 1.0 / 3.0, 8.0: 2.0 / 3.0}
        for v, expected in values.items():
            g, _ = mech.evaluate(inst.net, cut.replace(3, value=v), 3)
            assert g == pytest.approx(expected)

    def test_case1_payment_identity_numbers(self):
        # agent 3 at the worked-example bids without the forwarded branch:
        # -4/3 + 9*(2/3) - [(1/3)(6-4) + (2/3)(9-6)] = 2
        inst = fig_rc_instance()
        mech = RcExampleAuction()
        cut = inst.reports.replace(1, neighbors=frozenset())
        g, p = mech.evaluate(inst.net, cut, 3)
        assert g == pytest.approx(2.0 / 3.0)
        assert p == pytest.approx(-4.0 / 3.0 + 9.0 * (2.0 / 3.0)
                                  - ((6.0 - 4.0) / 3.0 + 2.0 * (9.0 - 6.0) / 3.0))
        assert p == pytest.approx(2.0)

    def test_diffusion_constraint_saturation(self):
        inst = fig_rc_instance()
        grid = make_grid(inst.reports, size=64)
        rep = check_diffusion_constraint(RcExampleAuction(), inst.net,
                                         inst.reports, grid, record_curves=True)
        assert rep.passed
        detail = rep.details[(1, ())]
        assert detail["lhs"] == pytest.approx(5.0 / 3.0, abs=1e-9)
        assert detail["rhs_max"] == pytest.approx(5.0 / 3.0, abs=1e-9)
        curve = detail["rhs_by_value"]
        for v, rhs in curve.items():
            if v >= 10.0:
                assert rhs == pytest.approx(5.0 / 3.0, abs=1e-9)
            elif v <= 9.0:
                assert rhs < 5.0 / 3.0 - 1e-6


class TestMutantsFail:
    @pytest.mark.parametrize("condition", list(DESIGNATED))
    def test_designated_check_fails(self, condition):
        name, factory = DESIGNATED[condition]
        inst = factory()
        mech = make_mutant(name)
        reports = run_all(mech, inst, conditions=CORE_CONDITIONS)
        assert not reports[condition].passed
        assert reports[condition].witness is not None

    @pytest.mark.parametrize("condition", list(DESIGNATED))
    def test_witness_replays(self, condition):
        name, factory = DESIGNATED[condition]
        inst = factory()
        mech = make_mutant(name)
        reports = run_all(mech, inst, conditions=CORE_CONDITIONS)
        rep = reports[condition]
        assert replay_witness(mech, inst.net, inst.reports, rep)

    def test_mff_checks_have_dedicated_breakers(self):
        # no vacuous passes: each structural check fails on some mutant
        for condition in STRUCTURAL:
            name, factory = DESIGNATED[condition]
            inst = factory()
            rep = run_all(make_mutant(name), inst, conditions=(condition,))
            assert not rep[condition].passed


class TestEquivalenceOfCharacterizations:
    def test_ddsic_iff_structural_checks(self):
        """The direct truthfulness check and the three structural checks
        agree (pass together or fail together) on every suite fixture."""
        cases = [(LblevAuction(fixtures.FIG_LBLEV_EXPONENTS),
                  fixtures.fig_lblev_instance()),
                 (RcExampleAuction(), fig_rc_instance())]
        for condition, (name, factory) in DESIGNATED.items():
            cases.append((make_mutant(name), factory()))
        rng = np.random.default_rng(8)
        for _ in range(5):
            inst = random_tree_instance(int(rng.integers(3, 10)), rng)
            cases.append((LblevAuction(random_exponents(inst.net.agents, rng)), inst))
        for mech, inst in cases:
            reports = run_all(mech, inst, conditions=CORE_CONDITIONS)
            structural = all(reports[c].passed for c in STRUCTURAL)
            assert structural == reports["ddsic"].passed, mech.name

    def test_ic_agrees_with_ddsic_on_fixtures(self):
        for condition, (name, factory) in DESIGNATED.items():
            inst = factory()
            mech = make_mutant(name)
            reports = run_all(mech, inst, conditions=("ddsic", "ic"))
            assert reports["ic"].passed == reports["ddsic"].passed


class TestIndividualChecks:
    def test_monotonicity_catches_decreasing_allocation(self):
        inst = fixtures.depth1_instance((10.0, 7.0))
        rep = check_allocation_monotonicity(make_mutant("award-lowest"),
                                            inst.net, inst.reports)
        assert not rep.passed
        assert rep.witness.agent in (1, 2)

    def test_identity_catches_flat_fee(self):
        inst = fixtures.depth1_instance((10.0, 7.0))
        rep = check_payment_identity(make_mutant("flat-fee"), inst.net, inst.reports)
        assert not rep.passed

    def test_diffusion_catches_greedy(self):
        inst = fixtures.chain_instance((5.0, 10.0))
        rep = check_diffusion_constraint(make_mutant("greedy-no-commission"),
                                         inst.net, inst.reports)
        assert not rep.passed
        assert rep.witness.agent == 1  # the chokepoint forwarder

    def test_ddsic_catches_no_offset(self):
        inst = fixtures.offset_trap_instance()
        rep = check_ddsic_deviations(make_mutant("no-offset"), inst.net, inst.reports)
        assert not rep.passed

    def test_ir_catches_loser_fee(self):
        inst = fixtures.depth1_instance((10.0, 7.0))
        rep = check_ir(make_mutant("loser-fee"), inst.net, inst.reports)
        assert not rep.passed
        assert rep.witness.lhs < 0

    def test_ir_utilities_on_worked_example(self):
        inst = fixtures.fig_lblev_instance()
        rep = check_ir(LblevAuction(inst.exponents), inst.net, inst.reports)
        assert rep.passed
        utils = rep.details["utilities"]
        assert utils[1] == pytest.approx(2.449489742783178, abs=1e-6)
        assert utils[5] == pytest.approx(3.6811017721895194, abs=1e-6)
        assert utils[8] == pytest.approx(750.0 - fixtures.FIG_LBLEV_PAY_K, abs=1e-6)
        assert utils[8] == pytest.approx(14.869, abs=1e-3)

    def test_ic_catches_joint_deviation(self):
        inst = fixtures.depth1_instance((10.0, 7.0))
        rep = check_ic_deviations(make_mutant("flat-fee"), inst.net, inst.reports)
        assert not rep.passed


class TestNeighborMisreport:
    def test_referral_family_on_diamond_networks(self):
        rng = np.random.default_rng(23)
        for k in range(8):
            n = int(rng.integers(3, 8))
            net = network_from_edges(random_dag_edges(rng, n),
                                     agents=range(1, n + 1))
            values = {i: float(rng.uniform(0, 100)) for i in net.agents}
            profile = truthful_profile(net, values)
            mech = __import__("diffusion_auctions").ReferralAuction(ArgmaxRule())
            rep = check_neighbor_misreport(mech, net, profile,
                                           make_grid(profile, size=32, seed=k))
            assert rep.passed, rep.witness

    def test_tree_case_reduces_to_forwarding_check(self):
        inst = fixtures.fig_lblev_instance()
        rep = check_neighbor_misreport(LblevAuction(inst.exponents),
                                       inst.net, inst.reports)
        assert rep.passed

    def test_catches_branch_biased_referrals(self):
        # pay a referral bonus only when the inviter's branch loses: the
        # chokepoint prefers cutting its winning branch
        from diffusion_auctions.mechanisms import Mechanism
        from diffusion_auctions.network import Outcome, filter_subnetwork

        class BranchBiasedBonus(Mechanism):
            name = "mutant:branch-biased"

            def run(self, net, reports):
                reached = sorted(filter_subnetwork(net, reports))
                allocation = {i: 0.0 for i in net.agents}
                payments = {i: 0.0 for i in net.agents}
                if not reached or all(reports.value(i) == 0 for i in reached):
                    return Outcome(allocation, payments, 0.0, None)
                ranked = sorted(reached, key=lambda i: (-reports.value(i), i))
                winner = ranked[0]
                price = reports.value(ranked[1]) if len(ranked) > 1 else 0.0
                allocation[winner] = 1.0
                payments[winner] = price
                for i in reached:
                    if i != winner and winner not in reports.neighbors(i):
                        payments[i] = -1.0  # bonus only off the winning branch
                return Outcome(allocation, payments,
                               sum(payments.values()), winner)

        net = network_from_edges([(0, 1), (1, 2)])
        profile = truthful_profile(net, {1: 5.0, 2: 10.0})
        rep = check_neighbor_misreport(BranchBiasedBonus(), net, profile)
        assert not rep.passed
        assert rep.witness.agent == 1


class TestTaEquivalence:
    def test_worked_example(self):
        inst = fixtures.fig_lblev_instance()
        rep = check_ta_equivalence(inst.net, inst.reports,
                                   PowerRule(inst.exponents))
        assert rep.passed
        assert rep.details["ta_revenue"] == 729.0

    def test_depth_one_trivial(self):
        inst = fixtures.depth1_instance((4.0, 9.0))
        rep = check_ta_equivalence(inst.net, inst.reports, ArgmaxRule())
        assert rep.passed

    def test_random_instances(self):
        rng = np.random.default_rng(29)
        for _ in range(40):
            n = int(rng.integers(1, 10))
            net = network_from_edges(random_dag_edges(rng, n),
                                     agents=range(1, n + 1))
            values = {i: float(rng.uniform(0, 50)) for i in net.agents}
            profile = truthful_profile(net, values)
            rule = PowerRule({i: float(rng.uniform(0.5, 3)) for i in net.agents})
            assert check_ta_equivalence(net, profile, rule).passed


class TestSubsetSampling:
    def test_high_degree_agent_flagged_probabilistic(self):
        n = 16
        net = network_from_edges([(0, 1)] + [(1, k) for k in range(2, n + 1)],
                                 agents=range(1, n + 1))
        values = {i: float(i) for i in net.agents}
        profile = truthful_profile(net, values)
        grid = make_grid(profile, size=16, seed=1)
        rep = check_ddsic_deviations(LblevAuction(None), net, profile, grid)
        assert rep.passed
        assert rep.details.get("sampled_agents") == [1]
