"""
Streamlit App Package
Contains web application components.
"""
