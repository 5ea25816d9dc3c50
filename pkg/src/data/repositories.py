"""Repository pattern implementations for data access"""

from abc import ABC, abstractmethod
from typing import Optional
from sqlalchemy.orm import Session

from .models import CompletionRecordModel


class BaseRepository(ABC):
    """Abstract base repository"""

    def __init__(self, session: Session):
        self.session = session

    @abstractmethod
    def create(self, entity):
        """Create entity"""
        pass

    @abstractmethod
    def read(self, entity_id: str):
        """Read entity by ID"""
        pass


class CompletionRecordRepository(BaseRepository):
    """Repository for recorded completions"""

    def create(self, record: CompletionRecordModel) -> CompletionRecordModel:
        self.session.add(record)
        self.session.commit()
        return record

    def read(self, prompt_sha256: str) -> Optional[CompletionRecordModel]:
        return self.session.query(CompletionRecordModel).filter(
            CompletionRecordModel.prompt_sha256 == prompt_sha256
        ).first()

    def upsert(self, record: CompletionRecordModel) -> CompletionRecordModel:
        """Replace any earlier answer for the same prompt"""
        merged = self.session.merge(record)
        self.session.commit()
        return merged

    def count(self) -> int:
        return self.session.query(CompletionRecordModel).count()
