# utils/database.py
"""
Registre des ajustements (SQLite par défaut) : chaque modèle ajusté par la
CLI y est consigné avec ses critères et son document JSON complet.
"""

import os
import datetime
import logging
from typing import Dict, List, Optional

from sqlalchemy import create_engine, Boolean, Column, Integer, String, Text, DateTime, Float, JSON
from sqlalchemy.orm import sessionmaker, declarative_base
from sqlalchemy.exc import SQLAlchemyError

from .config import DATABASE_URL, DATABASE_DIR

# Base de déclaration pour les modèles ORM
Base = declarative_base()

# Factory de session, liée à un moteur par init_db()
SessionLocal = sessionmaker(autocommit=False, autoflush=False)


def _utcnow() -> datetime.datetime:
    return datetime.datetime.now(datetime.timezone.utc)


class FitRecord(Base):
    __tablename__ = 'fits'

    id = Column(Integer, primary_key=True)
    timestamp = Column(DateTime, default=_utcnow)
    source = Column(Text)                   # Fichier d'entrée
    model = Column(String(200), nullable=False)
    structure = Column(String(20))
    method = Column(String(10))
    formula = Column(Text)
    loglik = Column(Float)
    aic = Column(Float)
    bic = Column(Float)
    k = Column(Integer)
    n_obs = Column(Integer)
    n_clusters = Column(Integer)
    converged = Column(Boolean)
    boundary = Column(Boolean)
    document = Column(JSON)                 # Document JSON complet du modèle


def init_db(url: str = DATABASE_URL):
    """Crée le moteur, la table `fits` si besoin, et lie la factory de session."""
    if url.startswith("sqlite:///") and url != "sqlite:///:memory:":
        # Crée le dossier de la base de données s'il n'existe pas
        folder = os.path.dirname(url[len("sqlite:///"):]) or DATABASE_DIR
        os.makedirs(folder, exist_ok=True)
    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    engine = create_engine(url, connect_args=connect_args, echo=False)
    try:
        Base.metadata.create_all(engine)
        logging.info("Table 'fits' vérifiée/créée dans la base de données.")
    except SQLAlchemyError as e:
        logging.error(f"Erreur lors de la création/vérification de la table: {e}")
    SessionLocal.configure(bind=engine)
    return engine


def log_fit(document: Dict[str, object], source: str = "") -> Optional[int]:
    """Enregistre un modèle ajusté (document de engine.to_document).

    Returns:
        ID de l'enregistrement, ou None en cas d'erreur
    """
    db_session = SessionLocal()
    try:
        record = FitRecord(
            source=source,
            model=str(document.get("model", "")),
            structure=document.get("structure"),
            method=document.get("method"),
            formula=document.get("formula"),
            loglik=document.get("loglik"),
            aic=document.get("aic"),
            bic=document.get("bic"),
            k=document.get("k"),
            n_obs=document.get("N"),
            n_clusters=document.get("M"),
            converged=document.get("converged"),
            boundary=document.get("boundary"),
            document=document,
        )
        db_session.add(record)
        db_session.commit()
        logging.info(f"Ajustement enregistré (Modèle: {record.model}, logLik: {record.loglik})")
        return record.id
    except SQLAlchemyError as e:
        logging.error(f"Erreur lors de l'enregistrement de l'ajustement: {e}")
        db_session.rollback()
        return None
    finally:
        db_session.close()


def get_all_fits(limit: int = 100) -> List[Dict[str, object]]:
    """Récupère les derniers ajustements enregistrés, du plus récent au plus ancien."""
    db_session = SessionLocal()
    try:
        records = (db_session.query(FitRecord)
                   .order_by(FitRecord.timestamp.desc(), FitRecord.id.desc())
                   .limit(limit).all())
        logging.info(f"{len(records)} ajustements récupérés.")
        return [
            {
                "id": rec.id,
                "timestamp": rec.timestamp,
                "source": rec.source,
                "model": rec.model,
                "structure": rec.structure,
                "method": rec.method,
                "loglik": rec.loglik,
                "aic": rec.aic,
                "bic": rec.bic,
                "k": rec.k,
                "converged": rec.converged,
                "boundary": rec.boundary,
            }
            for rec in records
        ]
    except SQLAlchemyError as e:
        logging.error(f"Erreur lors de la récupération des ajustements: {e}")
        return []
    finally:
        db_session.close()
