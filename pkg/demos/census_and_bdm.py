"""Small Turing-machine census, CTM values, BDM of longer strings, AID ranking."""

from collapselab.complexity import BdmConfig, Perturbation, bdm, ctm, rank_perturbations
from collapselab.tm import build_frequency_table, decode_machine, run_machine

# %% enumerate every 2-state binary machine
table = build_frequency_table(2, 2, budget=500)
print(f"{table.total_machines} machines, {table.halted_machines} halt, "
      f"{len(table.counts)} distinct outputs")
for o, c in table.ranked()[:8]:
    print(f"  {o:<5} count={c:<5} CTM={ctm(o, table).value:6.3f} bits")

# %% the first machine that writes more than one cell
for i in range(table.total_machines):
    r = run_machine(decode_machine(i, 2, 2), 500)
    if r.halted and len(r.output) >= 3:
        print("machine", i, decode_machine(i, 2, 2).transitions, "->", r.output, r.steps_used)
        break

# %% BDM with 2-symbol blocks; misses fall back to max CTM + 1 bit
cfg = BdmConfig(block_size=2, miss_policy="max-plus-one")
for o in ("00000000", "01010101", "01101001", "00101101"):
    print(f"BDM({o}) = {bdm(o, cfg, table).value:6.2f}")

# %% which single edit changes a periodic string the most
o = "01010101"
taus = [Perturbation("flip", i) for i in range(len(o))] + [Perturbation("delete", 0, 2)]
for tau, d in rank_perturbations(o, taus, cfg, table)[:4]:
    print(f"{str(tau):<8} -> {tau.apply(o):<9} delta={d:+.3f}")
