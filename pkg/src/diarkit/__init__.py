"""diarkit: semi-supervised multi-channel speaker diarization at desk scale.

Subpackages cover the full pipeline: synthetic corpus generation
(:mod:`diarkit.synthcorpus`), segment algebra and RTTM exchange
(:mod:`diarkit.timeline`), speech activity detection (:mod:`diarkit.sad`),
memory-aware speaker embeddings (:mod:`diarkit.mamse`), cross-channel
attention (:mod:`diarkit.xattn`), the multi-channel diarization network
(:mod:`diarkit.diarnet`), DER scoring and hypothesis fusion
(:mod:`diarkit.scoring`), and experiment orchestration
(:mod:`diarkit.pipeline`) with a CLI front end (:mod:`diarkit.cli`).
"""

__version__ = "0.1.0"
