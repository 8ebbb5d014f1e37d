"""멀티모달 모델의 모달리티 견고성 실험 패키지 (modrobe)."""

__version__ = "0.1.0"
