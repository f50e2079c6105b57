"""
Filters Component
Renders sidebar controls for picking a run and narrowing what it shows.
"""

import streamlit as st
import pandas as pd
from pathlib import Path
from typing import Dict, List, Optional


def render_sidebar_filters(runs: List[Path], root: Path) -> Dict:
    """
    Render sidebar controls and return the selected values.

    Args:
        runs: Run directories found under ``root``
        root: Directory the runs were discovered in

    Returns:
        Dictionary of selected filter values
    """

    filters: Dict = {}

    st.sidebar.markdown("""
    <div style="padding: 4px 0 18px 0;">
        <div style="font-size:16px;font-weight:600;color:#0F172A;">Offensive Language Runs</div>
        <div style="font-size:12px;color:#94A3B8;margin-top:2px;">Training and evaluation artifacts</div>
    </div>
    """, unsafe_allow_html=True)

    st.sidebar.markdown("""
    <p style="color:#94A3B8;font-weight:600;font-size:11px;letter-spacing:.06em;
              text-transform:uppercase;margin-bottom:10px;">Run</p>
    """, unsafe_allow_html=True)

    names = [str(r.relative_to(root)) for r in runs]
    filters['run'] = st.sidebar.selectbox(
        'Run directory',
        options=names,
        index=0,
        help="Any directory holding a resolved_config.yaml"
    )

    st.sidebar.markdown("---")

    with st.sidebar.expander("Error samples", expanded=False):
        filters['kind'] = st.selectbox(
            'Kind',
            options=['All', 'FP', 'FN'],
            index=0,
        )
        filters['search'] = st.text_input(
            'Text contains',
            value='',
        )

    st.sidebar.markdown("---")

    if st.sidebar.button('Reload runs', width='stretch'):
        st.cache_data.clear()
        st.rerun()

    st.sidebar.markdown("""
    <div style="border:1px solid #E5E7EB;border-radius:10px;padding:12px 14px;margin-top:14px;">
        <div style="color:#94A3B8;font-size:11px;margin-bottom:3px;">Source · {}</div>
        <div style="color:#0F172A;font-size:13px;">Runs found: <strong>{:,}</strong></div>
    </div>
    """.format(root, len(runs)), unsafe_allow_html=True)

    return filters


def apply_filters(samples: pd.DataFrame, filters: Dict) -> pd.DataFrame:
    """
    Narrow the error-sample frame to the selected kind and search text.

    Args:
        samples: Frame with ``kind``, ``id`` and ``text`` columns
        filters: Dictionary of filter values from render_sidebar_filters

    Returns:
        Filtered DataFrame
    """

    filtered = samples.copy()

    kind = filters.get('kind', 'All')
    if kind != 'All':
        filtered = filtered[filtered['kind'] == kind]

    search: Optional[str] = filters.get('search')
    if search:
        filtered = filtered[filtered['text'].str.contains(search, case=False, regex=False)]

    return filtered


def render_active_filters(filters: Dict) -> None:
    """
    Display currently active filters as tags.

    Args:
        filters: Dictionary of current filter values
    """

    active_filters = []

    for key, value in filters.items():
        if key == 'run' or value in ('All', '', None):
            continue
        active_filters.append(f"{key.title()}: {value}")

    if active_filters:
        tags_html = " ".join(
            f'<span class="filter-chip">{f}</span>' for f in active_filters
        )
        st.markdown(f"""
        <div style="margin:2px 0 18px 0;">
            <span style="color:#94A3B8;font-size:12px;margin-right:8px;">Active filters</span>
            {tags_html}
        </div>
        """, unsafe_allow_html=True)
