"""SQLAlchemy database models"""

from sqlalchemy import Column, String, DateTime, Text, Integer, Index
from sqlalchemy.orm import declarative_base
from datetime import datetime, timezone

Base = declarative_base()


class CompletionRecordModel(Base):
    """A recorded backend completion, keyed by the hash of its prompt"""
    __tablename__ = 'completion_records'

    prompt_sha256 = Column(String(64), primary_key=True)
    model_name = Column(String(255), nullable=False, default="")
    prompt = Column(Text, nullable=False)
    response_text = Column(Text, nullable=False)
    input_tokens = Column(Integer, nullable=False, default=0)
    output_tokens = Column(Integer, nullable=False, default=0)
    created_at = Column(DateTime, nullable=False, default=lambda: datetime.now(timezone.utc))

    __table_args__ = (
        Index('idx_completion_records_model', 'model_name'),
    )
