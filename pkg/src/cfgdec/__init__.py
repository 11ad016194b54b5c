"""cfgdec: sequence transduction whose output always belongs to a given CFG.

The model keeps one LSTM encoder-decoder pair per grammar nonterminal.  A
stack controller pops the nonterminal to expand, the pair picks one of its
rules, terminal rules emit tokens right-to-left, and the emitted suffix feeds
back in as context.  Because only grammar rules are ever applied, generated
output parses by construction.
"""

__version__ = "0.1.0"
